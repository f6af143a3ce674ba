//! Semigroup, gradient and flow diagnostics on random configurations.

use std::f64::consts::PI;
use std::sync::Arc;

use fdns_core::coefficients::{CoefficientSet, ScenarioPreset};
use fdns_core::config::McConfig;
use fdns_core::feynman_kac::{GradientBoundReport, SemigroupEstimator, TestFunction};
use fdns_core::fields::{wrap_unit, DomainDescriptor};
use fdns_core::navier_stokes::{kolmogorov_forward_residual, ForwardRow};
use fdns_core::rng::{RngContract, StreamTag};
use fdns_core::sde::{flow_compose_check, Drift, FnDrift, TimeMesh};
use fdns_core::Executor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::output::{num, Csv};
use crate::RunError;

fn cases_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// `sup |∇P_{t,t+gap} f|` for the zero-drift semigroup on the 1-d torus and a
/// step of width `gradcheck.width` smoothed by `tanh`, against `gap`.
pub fn gradient_scaling<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<GradientBoundReport, RunError> {
    let gaps = cfg.list("gradcheck.gaps");
    let t0 = cfg.f64("gradcheck.t");
    let horizon = t0 + gaps.iter().cloned().fold(0.0, f64::max);
    let set = ScenarioPreset::ZeroAll.build(DomainDescriptor::torus(1), horizon, cfg.kappa)?;
    let dt = cfg.f64("gradcheck.step_dt");
    let mc = McConfig {
        dt,
        dt_max: dt,
        ..cfg.mc
    };
    let rng = RngContract::new(cfg.seed);
    let drift = fdns_core::sde::ZeroDrift(1);
    let est = SemigroupEstimator::new(&set, &drift, &mc, &rng, exec)?;
    let w = cfg.f64("gradcheck.width");
    let step = TestFunction::new(1, Arc::new(move |x, o| o[0] = ((wrap_unit(x[0]) - 0.5) / w).tanh()));
    let k = cfg.usize("gradcheck.points").max(1);
    let points: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let off = if k == 1 { 0.0 } else { -10.0 + 20.0 * i as f64 / (k - 1) as f64 };
            vec![0.5 + off * w]
        })
        .collect();
    Ok(est.gradient_bound_check(
        t0,
        &step,
        1.0,
        1.0 / w,
        &gaps,
        &points,
        cfg.usize("gradcheck.particles"),
        StreamTag::GRADIENT,
    )?)
}

/// `gap,sup_grad,se,slope_fit,c1,c2`.
pub fn scaling_table(r: &GradientBoundReport) -> Csv {
    let mut csv = Csv::new(&["gap", "sup_grad", "se", "slope_fit", "c1", "c2"]);
    for row in &r.rows {
        csv.push(vec![
            num(row.gap),
            num(row.sup_grad),
            num(row.se),
            num(r.slope.unwrap_or(f64::NAN)),
            num(r.c1),
            num(r.c2),
        ]);
    }
    csv
}

/// One Bismut / variational / finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TriadRow {
    pub t: f64,
    pub s: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub bismut: f64,
    pub variational: f64,
    pub finite_difference: f64,
    /// Largest pairwise discrepancy in combined-SE units.
    pub agreement: f64,
    /// Closed-form gradient when known, with the discrepancy of each
    /// estimator from it in SE units (largest of the three).
    pub exact: Option<(f64, f64)>,
}

/// `(t, s, x, v) ↦ ∇_v P_{t,s} f(x)`.
pub type ExactGradient = dyn Fn(f64, f64, &[f64], &[f64]) -> f64;

/// Random `(t, s, x, v)` on the mesh of `mc`: `t` in the first half of the
/// horizon, `s - t` at least a tenth of it, `v` a unit vector. `exact` maps
/// `(t, s, x, v)` to the true gradient of `f = sin 2πx_1` if known.
#[allow(clippy::too_many_arguments)]
pub fn gradient_triad<D: Drift + ?Sized, E: Executor>(
    set: &CoefficientSet,
    drift: &D,
    mc: &McConfig,
    seed: u64,
    cases: usize,
    particles: usize,
    exec: &E,
    exact: Option<&ExactGradient>,
) -> Result<Vec<TriadRow>, RunError> {
    let rng = RngContract::new(seed);
    let est = SemigroupEstimator::new(set, drift, mc, &rng, exec)?;
    let mesh = TimeMesh::global(set.horizon, mc.dt)?;
    let k_total = mesh.total_steps;
    let d = set.dim();
    let f = TestFunction::fourier_mode(d, 0, 1.0, false);
    let mut pick = cases_rng(seed, 1);
    let mut rows = Vec::with_capacity(cases);
    for case in 0..cases {
        let kt = pick.gen_range(0..=k_total / 2);
        let ks = pick.gen_range((kt + k_total / 10).max(kt + 1)..=k_total);
        let (t, s) = (mesh.time(kt), mesh.time(ks));
        let x: Vec<f64> = (0..d).map(|_| pick.gen_range(0.0..1.0)).collect();
        let mut v: Vec<f64> = (0..d).map(|_| pick.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|a| *a /= norm);
        let g = est.bismut_gradient(t, s, &x, &f, &v, particles, StreamTag::GRADIENT.child(case as u64))?;
        let var = g.variational.clone().expect("sine mode has a gradient");
        let exact = exact.map(|e| {
            let value = e(t, s, &x, &v);
            let units = [&g.bismut, &var, &g.finite_difference]
                .iter()
                .map(|m| (m.value[0] - value).abs() / m.std_error[0])
                .fold(0.0, f64::max);
            (value, units)
        });
        rows.push(TriadRow {
            t,
            s,
            x,
            v,
            bismut: g.bismut.value[0],
            variational: var.value[0],
            finite_difference: g.finite_difference.value[0],
            agreement: g.agreement,
            exact,
        });
    }
    Ok(rows)
}

/// `∇_v P_{t,s} sin(2πx_1)` for the heat semigroup with viscosity `kappa`.
pub fn heat_sine_gradient(kappa: f64) -> impl Fn(f64, f64, &[f64], &[f64]) -> f64 {
    move |t, s, x, v| 2.0 * PI * (-4.0 * PI * PI * kappa * (s - t)).exp() * (2.0 * PI * x[0]).cos() * v[0]
}

pub fn triad_table(label: &str, rows: &[TriadRow], csv: &mut Csv) {
    for (i, r) in rows.iter().enumerate() {
        let join = |v: &[f64]| v.iter().map(|a| num(*a)).collect::<Vec<_>>().join(" ");
        csv.push(vec![
            label.to_string(),
            i.to_string(),
            num(r.t),
            num(r.s),
            join(&r.x),
            join(&r.v),
            num(r.bismut),
            num(r.variational),
            num(r.finite_difference),
            num(r.agreement),
            num(r.exact.map_or(f64::NAN, |e| e.0)),
            num(r.exact.map_or(f64::NAN, |e| e.1)),
        ]);
    }
}

pub fn triad_header() -> Csv {
    Csv::new(&[
        "drift",
        "case",
        "t",
        "s",
        "x",
        "v",
        "bismut",
        "variational",
        "finite_difference",
        "agreement_se",
        "exact",
        "exact_se",
    ])
}

/// Forward-equation discrepancies for `sin 2πx_1` and `cos 2πx_1` from
/// `t = 0` at `s = T/4, T/2, 3T/4`, at the point `(0.3, ..)`.
pub fn forward_check<D: Drift + ?Sized, E: Executor>(
    set: &CoefficientSet,
    drift: &D,
    mc: &McConfig,
    seed: u64,
    half_steps: usize,
    particles: usize,
    exec: &E,
) -> Result<Vec<(&'static str, ForwardRow)>, RunError> {
    let rng = RngContract::new(seed);
    let est = SemigroupEstimator::new(set, drift, mc, &rng, exec)?;
    let mesh = &est.mesh;
    let k = mesh.total_steps;
    let s_values: Vec<f64> = [k / 4, k / 2, 3 * k / 4].iter().map(|&i| mesh.time(i)).collect();
    let x = vec![0.3; set.dim()];
    let mut out = Vec::new();
    for (name, cosine) in [("sin", false), ("cos", true)] {
        let f = TestFunction::fourier_mode(set.dim(), 0, 1.0, cosine);
        for row in kolmogorov_forward_residual(&est, &f, 0.0, &s_values, half_steps, &x, particles)? {
            out.push((name, row));
        }
    }
    Ok(out)
}

pub fn forward_table(label: &str, rows: &[(&str, ForwardRow)], csv: &mut Csv) {
    for (f, r) in rows {
        csv.push(vec![
            label.to_string(),
            f.to_string(),
            num(r.s),
            num(r.report.time_derivative.value[0]),
            num(r.report.generator.value[0]),
            num(r.report.difference.value[0]),
            num(r.report.se_units),
        ]);
    }
}

pub fn forward_header() -> Csv {
    Csv::new(&["drift", "f", "s", "time_derivative", "generator", "difference", "se_units"])
}

/// One flow-property configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub t: f64,
    pub s: f64,
    pub r: f64,
    pub x: Vec<f64>,
    pub discrepancy: f64,
    /// Discrepancy when the second leg uses a different master seed.
    pub control: f64,
}

/// `X_{t,r} = X_{s,r}(X_{t,s})` on random distinct mesh points under the frozen drift
/// `-u0`, compared bitwise.
pub fn flow_cases<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<Vec<FlowRow>, RunError> {
    let set = cfg.coefficients()?;
    let d = set.dim();
    let u0 = set.u0.clone();
    let drift = FnDrift {
        dim: d,
        f: Arc::new(move |s, x, o| {
            u0(s, x, o);
            o[..d].iter_mut().for_each(|v| *v = -*v);
        }),
        jac: None,
    };
    let mesh = TimeMesh::global(set.horizon, cfg.mc.dt)?;
    let k = mesh.total_steps;
    let rng = RngContract::new(cfg.seed);
    let other = RngContract::new(cfg.seed.wrapping_add(1));
    let mut pick = cases_rng(cfg.seed, 2);
    let (lo, hi) = (set.domain.lo, set.domain.hi);
    let particles = cfg.usize("flowcheck.particles");
    let mut rows = Vec::new();
    for case in 0..cfg.usize("flowcheck.configs") {
        let mut idx = rand::seq::index::sample(&mut pick, k + 1, 3).into_vec();
        idx.sort_unstable();
        let x: Vec<f64> = (0..d)
            .map(|_| lo + (0.25 + 0.5 * pick.gen_range(0.0..1.0)) * (hi - lo))
            .collect();
        let span = mesh.span_steps(idx[0], idx[2])?;
        let split = mesh.time(idx[1]);
        let tag = StreamTag::FLOW.child(case as u64);
        let report = flow_compose_check(&set, &drift, span, split, &x, particles, &rng, None, tag, &cfg.mc, exec)?;
        let control = flow_compose_check(&set, &drift, span, split, &x, particles, &rng, Some(&other), tag, &cfg.mc, exec)?
            .max_discrepancy;
        rows.push(FlowRow {
            t: report.t,
            s: report.s,
            r: report.r,
            x,
            discrepancy: report.max_discrepancy,
            control,
        });
    }
    Ok(rows)
}

pub fn flow_table(rows: &[FlowRow]) -> Csv {
    let mut csv = Csv::new(&["case", "t", "s", "r", "x", "discrepancy", "control_discrepancy"]);
    for (i, r) in rows.iter().enumerate() {
        csv.push(vec![
            i.to_string(),
            num(r.t),
            num(r.s),
            num(r.r),
            r.x.iter().map(|a| num(*a)).collect::<Vec<_>>().join(" "),
            num(r.discrepancy),
            num(r.control),
        ]);
    }
    csv
}
