use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fields::{sup_norm_report, DomainKind, FieldNormReport, SpaceTimeField};
use crate::fixedpoint::{FlowKernel, PicardState, StandardFunctional, Verdict};
use crate::rng::{RngContract, StreamTag};

/// Identifies the run that produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
}

/// Velocity in physical time assembled from the fixed-point drift.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionBundle {
    /// `u_t` at the time nodes `t_j = jT/M`.
    pub u: SpaceTimeField,
    pub u_se: SpaceTimeField,
    /// Mean and standard error of `∂_i u^j` (`d x d` per node, `i` slow).
    pub gradient: Option<(SpaceTimeField, SpaceTimeField)>,
    /// Mean and standard error of `∇·u`.
    pub divergence: Option<(SpaceTimeField, SpaceTimeField)>,
    /// The fixed-point drift over SDE time.
    pub drift: SpaceTimeField,
    pub norms: FieldNormReport,
    /// `max |u_{T-s} + drift_s - b_{T-s}|` over all nodes.
    pub consistency: f64,
    /// Picard tolerance plus four combined standard errors.
    pub consistency_tolerance: f64,
    pub particles: usize,
    pub provenance: Provenance,
}

impl SolutionBundle {
    pub fn max_se(&self) -> f64 {
        self.u_se.values.iter().fold(0.0, |m, &v| m.max(v))
    }

    pub fn consistent(&self) -> bool {
        self.consistency <= self.consistency_tolerance
    }
}

/// Re-indexes a field over SDE time `s_m = mT/M` as a field over physical
/// time `t = T - s`.
pub fn to_physical_time(field: &SpaceTimeField) -> SpaceTimeField {
    let mut out = field.clone();
    let last = field.steps();
    for m in 0..=last {
        out.slice_mut(m).copy_from_slice(field.slice(last - m));
    }
    out
}

/// Fresh ensembles under the final drift give
/// `u_t = E[u0(X_{T-t,T}) + ∫_{T-t}^T V_{T-r}(X_{T-t,r}) dr]` at every node.
///
/// A state that did not converge is refused unless `force` is set.
pub fn representation_u<E: Executor>(
    kernel: &FlowKernel<'_>,
    state: &PicardState,
    rng: &RngContract,
    exec: &E,
    force: bool,
) -> Result<SolutionBundle> {
    if state.verdict != Verdict::Converged && !force {
        return Err(Error::NotConverged(format!(
            "{} after {} iterations",
            state.verdict.name(),
            state.iteration
        )));
    }
    let set = kernel.set;
    let d = set.dim();
    let derivatives = set.domain.kind == DomainKind::Torus && kernel.grid.n >= 4;
    let stats = kernel.statistics(
        &state.drift,
        &StandardFunctional,
        rng,
        StreamTag::REPRESENTATION,
        derivatives,
        exec,
    )?;

    let mut worst = 0.0f64;
    let mut worst_se = 0.0f64;
    let mut b = vec![0.0; d];
    for m in 0..=stats.mean.steps() {
        let s = stats.mean.times[m];
        for node in 0..kernel.grid.nodes() {
            let x = kernel.grid.node_coords(node);
            set.drift_b(set.horizon - s, &x, &mut b);
            let u = stats.mean.value(m, node);
            let g = state.drift.value(m, node);
            let mut e2 = 0.0;
            for j in 0..d {
                let e = u[j] + g[j] - b[j];
                e2 += e * e;
            }
            worst = worst.max(libm::sqrt(e2));
            let se_u = stats.std_error.value(m, node).iter().fold(0.0f64, |a, &v| a.max(v));
            let se_g = state.node_se.value(m, node)[0];
            worst_se = worst_se.max(libm::sqrt(se_u * se_u + se_g * se_g));
        }
    }

    let u = to_physical_time(&stats.mean);
    Ok(SolutionBundle {
        norms: sup_norm_report(&u)?,
        u,
        u_se: to_physical_time(&stats.std_error),
        gradient: stats
            .gradient
            .map(|(g, s)| (to_physical_time(&g), to_physical_time(&s))),
        divergence: stats
            .divergence
            .map(|(g, s)| (to_physical_time(&g), to_physical_time(&s))),
        drift: state.drift.clone(),
        consistency: worst,
        consistency_tolerance: state.tol + 4.0 * worst_se,
        particles: stats.particles,
        provenance: Provenance {
            config_hash: 0,
            seed: rng.master_seed,
        },
    })
}
