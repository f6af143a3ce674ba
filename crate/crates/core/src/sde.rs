//! Euler-Maruyama simulation of the flow `X_{t,s}^x` for a frozen drift,
//! with the variational flow `∇X`.
//!
//! Time runs in the SDE's own variable `s ∈ [t, T]`; the diffusion is
//! evaluated at physical time `T - s`. Positions are kept unwrapped in `R^d`
//! (wrapping happens only inside coefficient evaluation) so the flow property
//! holds exactly for the discrete recursion.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coefficients::CoefficientSet;
use crate::config::McConfig;
use crate::error::{Error, Result};
use crate::exec::{mc_mean, Executor};
use crate::fields::SpaceTimeField;
use crate::linalg;
use crate::rng::{NoiseStream, RngContract, StreamKey};
use crate::stats::MCEstimate;

/// Restriction of the global mesh `k·dt, k = 0..K` (`K·dt = T`) to `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMesh {
    pub horizon: f64,
    pub dt: f64,
    /// `K`.
    pub total_steps: usize,
    /// Global index of `t_start`.
    pub start_step: usize,
    /// Number of steps from `t_start` to `t_end`.
    pub steps: usize,
}

impl TimeMesh {
    /// The whole mesh over `[0, T]`. `T/dt` must be an integer.
    pub fn global(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && dt > 0.0) {
            return Err(Error::Mesh(format!("invalid mesh T = {horizon}, dt = {dt}")));
        }
        let k = libm::round(horizon / dt);
        if k < 1.0 || (k * dt - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(Error::Mesh(format!(
                "T = {horizon} is not an integer multiple of dt = {dt}"
            )));
        }
        let k = k as usize;
        Ok(Self {
            horizon,
            dt: horizon / k as f64,
            total_steps: k,
            start_step: 0,
            steps: k,
        })
    }

    /// Global time of step index `k`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.total_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    /// Global index of a mesh time; non-mesh times are a mesh error.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = libm::round(t / self.dt);
        if !(k >= 0.0 && k <= self.total_steps as f64) || (k * self.dt - t).abs() > 1e-9 * self.dt {
            return Err(Error::Mesh(format!(
                "time {t} is not a point of the global mesh (dt = {})",
                self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Sub-mesh over `[t_start, t_end]`.
    pub fn span(&self, t_start: f64, t_end: f64) -> Result<Self> {
        let a = self.index_of(t_start)?;
        let b = self.index_of(t_end)?;
        self.span_steps(a, b)
    }

    pub fn span_steps(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.total_steps {
            return Err(Error::Mesh(format!("invalid step span [{start}, {end}]")));
        }
        Ok(Self {
            start_step: start,
            steps: end - start,
            ..*self
        })
    }

    pub fn end_step(&self) -> usize {
        self.start_step + self.steps
    }

    pub fn t_start(&self) -> f64 {
        self.time(self.start_step)
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.end_step())
    }
}

/// Drift of the frozen SDE as a function of SDE time `s` and unwrapped `x`.
pub trait Drift: Sync + Send {
    fn dim(&self) -> usize;

    fn eval(&self, s: f64, x: &[f64], out: &mut [f64]);

    /// `out[i*d + j] = ∂_j drift^i`; centered differences with step `h` by default.
    fn jacobian(&self, s: f64, x: &[f64], h: f64, out: &mut [f64]) {
        let d = self.dim();
        let mut xp = [0.0; 3];
        let mut fp = [0.0; 3];
        let mut fm = [0.0; 3];
        for j in 0..d {
            xp[..d].copy_from_slice(x);
            xp[j] = x[j] + h;
            self.eval(s, &xp[..d], &mut fp[..d]);
            xp[j] = x[j] - h;
            self.eval(s, &xp[..d], &mut fm[..d]);
            for i in 0..d {
                out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }

    /// True when the drift vanishes identically (lets the Jacobian recursion stay exact).
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroDrift(pub usize);

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out[..self.0].iter_mut().for_each(|v| *v = 0.0);
    }
    fn jacobian(&self, _: f64, _: &[f64], _: f64, out: &mut [f64]) {
        out[..self.0 * self.0].iter_mut().for_each(|v| *v = 0.0);
    }
    fn is_zero(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct ConstantDrift(pub Vec<f64>);

impl Drift for ConstantDrift {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out[..self.0.len()].copy_from_slice(&self.0);
    }
    fn jacobian(&self, _: f64, _: &[f64], _: f64, out: &mut [f64]) {
        let d = self.0.len();
        out[..d * d].iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `drift(x) = A x`, `A` row-major.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    pub dim: usize,
    pub matrix: Vec<f64>,
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _: f64, x: &[f64], out: &mut [f64]) {
        linalg::matvec(&self.matrix, x, self.dim, out);
    }
    fn jacobian(&self, _: f64, _: &[f64], _: f64, out: &mut [f64]) {
        out[..self.dim * self.dim].copy_from_slice(&self.matrix);
    }
}

/// `(s, x, out)` closure type.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Closed-form drift with optional analytic Jacobian.
#[derive(Clone)]
pub struct FnDrift {
    pub dim: usize,
    pub f: DriftFn,
    pub jac: Option<DriftFn>,
}

impl Drift for FnDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, s: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(s, x, out)
    }
    fn jacobian(&self, s: f64, x: &[f64], h: f64, out: &mut [f64]) {
        match &self.jac {
            Some(j) => j(s, x, out),
            None => {
                let d = self.dim;
                let mut xp = [0.0; 3];
                let mut fp = [0.0; 3];
                let mut fm = [0.0; 3];
                for j in 0..d {
                    xp[..d].copy_from_slice(x);
                    xp[j] = x[j] + h;
                    (self.f)(s, &xp[..d], &mut fp[..d]);
                    xp[j] = x[j] - h;
                    (self.f)(s, &xp[..d], &mut fm[..d]);
                    for i in 0..d {
                        out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
            }
        }
    }
}

/// Drift interpolated from a field indexed by SDE time `s`.
#[derive(Debug, Clone)]
pub struct GridDrift {
    pub field: SpaceTimeField,
}

impl Drift for GridDrift {
    fn dim(&self) -> usize {
        self.field.grid.dim()
    }
    fn eval(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let s = s.clamp(0.0, self.field.horizon());
        if self.field.interpolate_into(s, x, out).is_err() {
            // only reachable on free space: outside the box the drift is unknown
            out[..self.dim()].iter_mut().for_each(|v| *v = f64::NAN);
        }
    }
}

/// Shared state of one Euler-Maruyama path.
pub(crate) struct Stepper<'a, D: Drift + ?Sized> {
    pub set: &'a CoefficientSet,
    pub drift: &'a D,
    pub mesh: TimeMesh,
    pub h_jac: f64,
    /// `sqrt(2κ)` for isotropic diffusion.
    pub sigma: Option<f64>,
    pub dt_sqrt: f64,
}

/// One step as seen by a path visitor.
pub(crate) struct StepView<'v> {
    /// Global index of the new state.
    pub step: usize,
    pub x_prev: &'v [f64],
    pub x: &'v [f64],
    /// `J` of the new state.
    pub jac: Option<&'v [f64]>,
    /// `ΔW` used to go from `x_prev` to `x`.
    pub dw: &'v [f64],
}

impl<'a, D: Drift + ?Sized> Stepper<'a, D> {
    pub fn new(set: &'a CoefficientSet, drift: &'a D, mesh: TimeMesh, mc: &McConfig) -> Result<Self> {
        if drift.dim() != set.dim() {
            return Err(Error::Shape(format!(
                "drift dimension {} differs from problem dimension {}",
                drift.dim(),
                set.dim()
            )));
        }
        if mesh.dt > mc.dt_max * (1.0 + 1e-12) {
            return Err(Error::Configuration(format!(
                "dt = {} exceeds dt_max = {}",
                mesh.dt, mc.dt_max
            )));
        }
        Ok(Self {
            set,
            drift,
            mesh,
            h_jac: mc.h_jac,
            sigma: set.is_isotropic().then(|| libm::sqrt(2.0 * set.kappa)),
            dt_sqrt: libm::sqrt(mesh.dt),
        })
    }

    /// Runs one path from `x0` over the stepper's mesh, calling `visit` after
    /// every step. `jac` (if given) must hold the initial Jacobian.
    pub fn run(
        &self,
        particle: usize,
        stream: &mut NoiseStream,
        x0: &[f64],
        mut jac: Option<&mut [f64]>,
        mut visit: impl FnMut(StepView<'_>) -> Result<()>,
    ) -> Result<()> {
        let d = self.set.dim();
        let dt = self.mesh.dt;
        let horizon = self.set.horizon;
        let mut x = [0.0; 3];
        let mut xp: [f64; 3];
        let mut dw = [0.0; 3];
        let mut b = [0.0; 3];
        let mut noise = [0.0; 3];
        let mut db = [0.0; 9];
        let mut jn = [0.0; 9];
        x[..d].copy_from_slice(x0);
        for k in self.mesh.start_step..self.mesh.end_step() {
            let s = self.mesh.time(k);
            stream.increment(k as u64, self.dt_sqrt, &mut dw[..d]);
            xp = x;
            self.drift.eval(s, &xp[..d], &mut b[..d]);
            let sig_mat = match self.sigma {
                Some(sig) => {
                    noise[..d].iter_mut().zip(&dw[..d]).for_each(|(n, w)| *n = sig * w);
                    None
                }
                None => {
                    let m = self.set.noise_matrix(horizon - s, &xp[..d])?;
                    linalg::matvec(&m, &dw[..d], d, &mut noise[..d]);
                    Some(m)
                }
            };
            for a in 0..d {
                x[a] = xp[a] + b[a] * dt + noise[a];
            }
            if let Some(j) = jac.as_deref_mut() {
                if !self.drift.is_zero() || sig_mat.is_some() {
                    if self.drift.is_zero() {
                        db[..d * d].iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        self.drift.jacobian(s, &xp[..d], self.h_jac, &mut db[..d * d]);
                        db[..d * d].iter_mut().for_each(|v| *v *= dt);
                    }
                    if sig_mat.is_some() {
                        self.add_noise_gradient(horizon - s, &xp[..d], &dw[..d], &mut db[..d * d])?;
                    }
                    linalg::matmul(&db[..d * d], j, d, &mut jn[..d * d]);
                    for (jj, n) in j.iter_mut().zip(&jn[..d * d]) {
                        *jj += n;
                    }
                }
            }
            if x[..d].iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulation {
                    particle,
                    step: k + 1,
                    detail: format!("non-finite position {:?}", &x[..d]),
                });
            }
            visit(StepView {
                step: k + 1,
                x_prev: &xp[..d],
                x: &x[..d],
                jac: jac.as_deref(),
                dw: &dw[..d],
            })?;
        }
        Ok(())
    }

    /// Adds `G[i][l] = Σ_m ∂_l σ_im(x) dW_m` (centered differences) to `out`.
    fn add_noise_gradient(&self, t: f64, x: &[f64], dw: &[f64], out: &mut [f64]) -> Result<()> {
        let d = x.len();
        let h = self.h_jac;
        let mut xs = [0.0; 3];
        for l in 0..d {
            xs[..d].copy_from_slice(x);
            xs[l] = x[l] + h;
            let sp = self.set.noise_matrix(t, &xs[..d])?;
            xs[l] = x[l] - h;
            let sm = self.set.noise_matrix(t, &xs[..d])?;
            for i in 0..d {
                let mut g = 0.0;
                for m in 0..d {
                    g += (sp[i * d + m] - sm[i * d + m]) / (2.0 * h) * dw[m];
                }
                out[i * d + l] += g;
            }
        }
        Ok(())
    }
}

/// Start points of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum StartPoints {
    /// One point shared by all particles.
    Single(Vec<f64>),
    /// `N x d` row-major, one point per particle.
    PerParticle(Vec<f64>),
}

impl StartPoints {
    fn point(&self, p: usize, d: usize) -> &[f64] {
        match self {
            StartPoints::Single(x) => x,
            StartPoints::PerParticle(xs) => &xs[p * d..(p + 1) * d],
        }
    }
}

/// `N` simulated paths of `X_{t,·}^x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub mesh: TimeMesh,
    pub particles: usize,
    pub key: StreamKey,
    /// `N x (steps + 1) x d`.
    pub positions: Vec<f64>,
    /// `N x (steps + 1) x d x d` when simulated with Jacobians.
    pub jacobians: Option<Vec<f64>>,
}

impl ParticleEnsemble {
    pub fn start_time(&self) -> f64 {
        self.mesh.t_start()
    }

    /// Stream identifier of particle `p` within [`key`](Self::key).
    pub fn stream_id(&self, p: usize) -> u64 {
        p as u64
    }

    pub fn position(&self, p: usize, j: usize) -> &[f64] {
        let d = self.dim;
        let off = (p * (self.mesh.steps + 1) + j) * d;
        &self.positions[off..off + d]
    }

    pub fn terminal(&self, p: usize) -> &[f64] {
        self.position(p, self.mesh.steps)
    }

    pub fn jacobian(&self, p: usize, j: usize) -> Option<&[f64]> {
        let d = self.dim;
        let off = (p * (self.mesh.steps + 1) + j) * d * d;
        self.jacobians.as_ref().map(|js| &js[off..off + d * d])
    }
}

/// Simulates `particles` Euler-Maruyama paths over `mesh`.
///
/// Particle `p` draws its increments from stream `p` of `key`, so ensembles
/// sharing key and mesh points see identical noise.
#[allow(clippy::too_many_arguments)]
pub fn simulate_flow<D: Drift + ?Sized, E: Executor>(
    set: &CoefficientSet,
    drift: &D,
    mesh: TimeMesh,
    starts: &StartPoints,
    particles: usize,
    rng: &RngContract,
    key: StreamKey,
    with_jacobian: bool,
    mc: &McConfig,
    exec: &E,
) -> Result<ParticleEnsemble> {
    let d = set.dim();
    match starts {
        StartPoints::Single(x) if x.len() != d => {
            return Err(Error::Shape(format!("start point has {} coordinates, expected {d}", x.len())))
        }
        StartPoints::PerParticle(xs) if xs.len() != particles * d => {
            return Err(Error::Shape(format!(
                "{} start coordinates for {particles} particles in d = {d}",
                xs.len()
            )))
        }
        _ => {}
    }
    let stepper = Stepper::new(set, drift, mesh, mc)?;
    let len = mesh.steps + 1;
    let block = mc.block.max(1);
    let blocks = particles.div_ceil(block);
    let parts = exec.map(blocks, |b| -> Result<(Vec<f64>, Vec<f64>)> {
        let range = (b * block)..((b + 1) * block).min(particles);
        let mut pos = Vec::with_capacity(range.len() * len * d);
        let mut jacs = Vec::new();
        for p in range {
            let x0 = starts.point(p, d);
            let mut stream = rng.stream(key, p as u64, d);
            let mut jac = linalg::identity(d);
            pos.extend_from_slice(x0);
            if with_jacobian {
                jacs.extend_from_slice(&jac);
            }
            let jac_arg = with_jacobian.then_some(&mut jac[..]);
            stepper.run(p, &mut stream, x0, jac_arg, |v| {
                pos.extend_from_slice(v.x);
                if let Some(j) = v.jac {
                    jacs.extend_from_slice(j);
                }
                Ok(())
            })?;
        }
        Ok((pos, jacs))
    });
    let mut positions = Vec::with_capacity(particles * len * d);
    let mut jacobians = Vec::new();
    for part in parts {
        let (p, j) = part?;
        positions.extend_from_slice(&p);
        jacobians.extend_from_slice(&j);
    }
    Ok(ParticleEnsemble {
        dim: d,
        mesh,
        particles,
        key,
        positions,
        jacobians: with_jacobian.then_some(jacobians),
    })
}

/// Outcome of a flow-property check.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowReport {
    pub t: f64,
    pub s: f64,
    pub r: f64,
    pub particles: usize,
    /// `max_p |X_{t,r} - X_{s,r}(X_{t,s})|` over particles and axes.
    pub max_discrepancy: f64,
}

/// Simulates `[t, r]` in one pass and as `[t, s]` then `[s, r]` reusing the
/// stream of the one-pass run (the second leg reads from the steps after `s`),
/// and reports the largest discrepancy. `second_leg_rng` substitutes another
/// master seed for the second leg (negative control).
#[allow(clippy::too_many_arguments)]
pub fn flow_compose_check<D: Drift + ?Sized, E: Executor>(
    set: &CoefficientSet,
    drift: &D,
    mesh: TimeMesh,
    split: f64,
    x0: &[f64],
    particles: usize,
    rng: &RngContract,
    second_leg_rng: Option<&RngContract>,
    tag: crate::rng::StreamTag,
    mc: &McConfig,
    exec: &E,
) -> Result<FlowReport> {
    let split_step = mesh.index_of(split)?;
    if split_step < mesh.start_step || split_step > mesh.end_step() {
        return Err(Error::Mesh(format!(
            "split {split} outside [{}, {}]",
            mesh.t_start(),
            mesh.t_end()
        )));
    }
    let key = StreamKey::new(tag, mesh.start_step as u64);
    let starts = StartPoints::Single(x0.to_vec());
    let whole = simulate_flow(set, drift, mesh, &starts, particles, rng, key, false, mc, exec)?;
    let first = mesh.span_steps(mesh.start_step, split_step)?;
    let second = mesh.span_steps(split_step, mesh.end_step())?;
    let leg1 = simulate_flow(set, drift, first, &starts, particles, rng, key, false, mc, exec)?;
    let d = set.dim();
    let mid: Vec<f64> = (0..particles).flat_map(|p| leg1.terminal(p).to_vec()).collect();
    let leg2 = simulate_flow(
        set,
        drift,
        second,
        &StartPoints::PerParticle(mid),
        particles,
        second_leg_rng.unwrap_or(rng),
        key,
        false,
        mc,
        exec,
    )?;
    let mut worst = 0.0f64;
    for p in 0..particles {
        for a in 0..d {
            worst = worst.max((whole.terminal(p)[a] - leg2.terminal(p)[a]).abs());
        }
    }
    Ok(FlowReport {
        t: mesh.t_start(),
        s: split,
        r: mesh.t_end(),
        particles,
        max_discrepancy: worst,
    })
}

/// `E[sup_steps ‖J‖^j]` (operator norm) with its standard error.
pub fn jacobian_norm_stats(ensemble: &ParticleEnsemble, j: i32) -> Result<MCEstimate> {
    jacobian_stats(ensemble, j, None)
}

/// `E[sup_steps |J v|^j]`, the moment of `∇_v X`.
pub fn jacobian_direction_stats(ensemble: &ParticleEnsemble, v: &[f64], j: i32) -> Result<MCEstimate> {
    if v.len() != ensemble.dim {
        return Err(Error::Shape("direction has wrong dimension".into()));
    }
    jacobian_stats(ensemble, j, Some(v))
}

fn jacobian_stats(ensemble: &ParticleEnsemble, j: i32, v: Option<&[f64]>) -> Result<MCEstimate> {
    if ensemble.jacobians.is_none() {
        return Err(Error::Shape("ensemble was simulated without Jacobians".into()));
    }
    let d = ensemble.dim;
    mc_mean(&crate::exec::Sequential, ensemble.particles, usize::MAX, 1, |p, out| {
        let mut sup = 0.0f64;
        let mut jv = [0.0; 3];
        for step in 0..=ensemble.mesh.steps {
            let jac = ensemble.jacobian(p, step).unwrap();
            let norm = match v {
                Some(v) => {
                    linalg::matvec(jac, v, d, &mut jv[..d]);
                    linalg::norm(&jv[..d])
                }
                None => linalg::operator_norm(jac, d),
            };
            sup = sup.max(norm);
        }
        out[0] = libm::pow(sup, j as f64);
        Ok(())
    })
}
