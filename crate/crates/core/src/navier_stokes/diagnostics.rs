use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::SolutionBundle;
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::feynman_kac::{ForwardReport, SemigroupEstimator, TestFunction};
use crate::fields::{divergence_of, gradient_of, laplacian_of, Grid, SpaceTimeField};
use crate::rng::StreamTag;
use crate::sde::Drift;
use crate::stats::median;

/// `∂_i³ v^j` per node by the five-point centered stencil (`d x c`, `i` slow).
fn third_derivative_of(grid: &Grid, data: &[f64], c: usize) -> Result<Vec<f64>> {
    let d = grid.dim();
    let nodes = grid.nodes();
    if data.len() != nodes * c {
        return Err(Error::Shape("slice length does not match grid".into()));
    }
    let h = grid.h();
    let scale = 0.5 / (h * h * h);
    let mut out = vec![f64::NAN; nodes * d * c];
    for node in 0..nodes {
        for i in 0..d {
            let p1 = grid.neighbor(node, i, 1);
            let m1 = grid.neighbor(node, i, -1);
            let p2 = p1.and_then(|p| grid.neighbor(p, i, 1));
            let m2 = m1.and_then(|m| grid.neighbor(m, i, -1));
            if let (Some(p1), Some(m1), Some(p2), Some(m2)) = (p1, m1, p2, m2) {
                for j in 0..c {
                    out[(node * d + i) * c + j] = scale
                        * (data[p2 * c + j] - 2.0 * data[p1 * c + j] + 2.0 * data[m1 * c + j]
                            - data[m2 * c + j]);
                }
            }
        }
    }
    Ok(out)
}

fn sup(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().filter(|v| v.is_finite()).fold(0.0, f64::max)
}

/// Incompressibility and pressure-criterion profiles of a solution, with
/// their runtime error budgets (finite-difference truncation plus four
/// Monte Carlo standard errors).
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub times: Vec<f64>,
    /// `max_x |∇·u_t|`.
    pub divergence: Vec<f64>,
    pub divergence_budget: Vec<f64>,
    /// `max_x |Δ℘_t + Σ_ij ∂_i Q_t^j ∂_j Q_t^i|`.
    pub pw_residual: Vec<f64>,
    pub pw_budget: Vec<f64>,
}

impl DivergenceReport {
    pub fn max_divergence(&self) -> f64 {
        sup(self.divergence.iter().copied())
    }

    pub fn max_divergence_budget(&self) -> f64 {
        sup(self.divergence_budget.iter().copied())
    }

    pub fn max_pw_residual(&self) -> f64 {
        sup(self.pw_residual.iter().copied())
    }

    pub fn max_pw_budget(&self) -> f64 {
        sup(self.pw_budget.iter().copied())
    }

    /// Largest `divergence / budget` over time nodes.
    pub fn divergence_ratio(&self) -> f64 {
        worst_ratio(&self.divergence, &self.divergence_budget)
    }

    /// Largest `pw_residual / budget` over time nodes.
    pub fn pw_ratio(&self) -> f64 {
        worst_ratio(&self.pw_residual, &self.pw_budget)
    }
}

fn worst_ratio(values: &[f64], budgets: &[f64]) -> f64 {
    values
        .iter()
        .zip(budgets)
        .map(|(&v, &b)| match (v, b) {
            (0.0, _) => 0.0,
            (v, b) if b > 0.0 => v / b,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Per time node: the divergence of the solution by centered differences,
/// and the residual of `Δ℘ + Σ_ij (∂_i Q^j)(∂_j Q^i) = 0` with `Q` the
/// represented velocity.
///
/// With `τ = truncation_factor · h²/6`, the budgets per node are
/// `τ |Σ_i ∂_i³ u^i| + 4 SE(∇·u)` for the divergence and
/// `Σ_ij 2|∂_j Q^i| (τ |∂_i³ Q^j| + 4 SE(∂_i Q^j))` for the residual, each
/// reduced by its maximum over nodes. A roundoff allowance of
/// `10³ ε ‖∇u_t‖∞` is added to both.
pub fn divergence_residual(
    set: &CoefficientSet,
    solution: &SolutionBundle,
    truncation_factor: f64,
) -> Result<DivergenceReport> {
    let u = &solution.u;
    let grid = u.grid;
    let d = grid.dim();
    if u.components != d {
        return Err(Error::Shape(format!(
            "divergence needs a {d}-component velocity, got {}",
            u.components
        )));
    }
    let nodes = grid.nodes();
    let h = grid.h();
    let trunc = truncation_factor * h * h / 6.0;
    let mut report = DivergenceReport {
        times: u.times.clone(),
        divergence: Vec::new(),
        divergence_budget: Vec::new(),
        pw_residual: Vec::new(),
        pw_budget: Vec::new(),
    };
    for m in 0..=u.steps() {
        let t = u.times[m];
        let slice = u.slice(m);
        let grad = gradient_of(&grid, slice, d)?;
        let div = divergence_of(&grid, slice, d)?;
        let third = third_derivative_of(&grid, slice, d)?;
        let roundoff = 1e3 * f64::EPSILON * sup(grad.iter().map(|g| g.abs())).max(1.0);
        let grad_se = solution.gradient.as_ref().map(|(_, se)| se.slice(m));
        let div_se = solution.divergence.as_ref().map(|(_, se)| se.slice(m));

        let mut div_max = 0.0f64;
        let mut div_budget = 0.0f64;
        let mut pw_max = 0.0f64;
        let mut pw_budget = 0.0f64;
        for node in 0..nodes {
            let a = &grad[node * d * d..(node + 1) * d * d];
            let e3 = &third[node * d * d..(node + 1) * d * d];
            let signed: f64 = (0..d).map(|i| e3[i * d + i]).sum();
            let se = div_se.map_or(0.0, |s| s[node]);
            div_max = div_max.max(div[node].abs());
            div_budget = div_budget.max(trunc * signed.abs() + 4.0 * se);

            let x = grid.node_coords(node);
            let mut r = set.pressure_laplacian(t, &x, h)?;
            let mut budget = 0.0;
            for i in 0..d {
                for j in 0..d {
                    r += a[i * d + j] * a[j * d + i];
                    let se_ij = grad_se.map_or(0.0, |s| s[node * d * d + i * d + j]);
                    budget += 2.0 * a[j * d + i].abs() * (trunc * e3[i * d + j].abs() + 4.0 * se_ij);
                }
            }
            pw_max = pw_max.max(r.abs());
            pw_budget = pw_budget.max(budget);
        }
        report.divergence.push(div_max);
        report.divergence_budget.push(div_budget + roundoff);
        report.pw_residual.push(pw_max);
        report.pw_budget.push(pw_budget + roundoff);
    }
    Ok(report)
}

/// Residual of the transport equation of `h = ∇·u`,
/// `∂_t h - (κΔ - u·∇) h + Δ℘ + Σ_ij (∂_i u^j)(∂_j u^i)`, by centered
/// differences on the interior time nodes. Returns `(t, max_x |residual|)`.
pub fn divergence_evolution_residual(u: &SpaceTimeField, set: &CoefficientSet) -> Result<Vec<(f64, f64)>> {
    let grid = u.grid;
    let d = grid.dim();
    if d > 2 || u.components != d {
        return Err(Error::Shape(format!(
            "divergence evolution needs a velocity field in dimension 1 or 2, got {} components in dimension {d}",
            u.components
        )));
    }
    let big_m = u.steps();
    if big_m < 4 {
        return Err(Error::Mesh(format!(
            "insufficient time resolution: M = {big_m}, need at least 4"
        )));
    }
    let nodes = grid.nodes();
    let divs = (0..=big_m)
        .map(|m| divergence_of(&grid, u.slice(m), d))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(big_m - 1);
    for m in 1..big_m {
        let t = u.times[m];
        let dt = u.times[m + 1] - u.times[m - 1];
        let slice = u.slice(m);
        let grad = gradient_of(&grid, slice, d)?;
        let h = &divs[m];
        let lap_h = laplacian_of(&grid, h, 1)?;
        let grad_h = gradient_of(&grid, h, 1)?;
        let mut worst = 0.0f64;
        for node in 0..nodes {
            let x = grid.node_coords(node);
            let dh = (divs[m + 1][node] - divs[m - 1][node]) / dt;
            let a = &grad[node * d * d..(node + 1) * d * d];
            let mut source = set.pressure_laplacian(t, &x, grid.h())?;
            let mut advect = 0.0;
            for i in 0..d {
                advect += slice[node * d + i] * grad_h[node * d + i];
                for j in 0..d {
                    source += a[i * d + j] * a[j * d + i];
                }
            }
            let r = dh - set.kappa * lap_h[node] + advect + source;
            if r.is_finite() {
                worst = worst.max(r.abs());
            }
        }
        out.push((t, worst));
    }
    Ok(out)
}

/// One row of [`kolmogorov_forward_residual`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRow {
    pub s: f64,
    pub report: ForwardReport,
}

/// The forward equation `∂_s P_{t,s} f = P_{t,s}(L_s f)` checked at every `s`
/// in `s_values` (a centered difference over `±half_steps` Euler steps).
#[allow(clippy::too_many_arguments)]
pub fn kolmogorov_forward_residual<D: Drift + ?Sized, E: Executor>(
    estimator: &SemigroupEstimator<'_, D, E>,
    f: &TestFunction,
    t: f64,
    s_values: &[f64],
    half_steps: usize,
    x: &[f64],
    n: usize,
) -> Result<Vec<ForwardRow>> {
    s_values
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let tag = StreamTag::ESTIMATE.child(i as u64);
            Ok(ForwardRow {
                s,
                report: estimator.kolmogorov_forward(t, s, half_steps, x, f, n, tag)?,
            })
        })
        .collect()
}

/// Gradient-regularity table `‖∇u_t‖∞ √t / (‖u0‖∞ + ∫_0^t ‖V_r‖∞ dr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityTable {
    /// Time nodes with `t > 0`.
    pub times: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max: f64,
    pub median: f64,
    /// Allowed `max / median`.
    pub flatness: f64,
}

impl RegularityTable {
    /// `max ≤ flatness · median` (an all-zero table is flat).
    pub fn bounded(&self) -> bool {
        self.max == 0.0 || self.max <= self.flatness * self.median
    }
}

/// Tabulates the gradient ratio at every time node except `t = 0`; sups are
/// over grid nodes (Frobenius norm of the centered-difference gradient).
pub fn regularity_check(u: &SpaceTimeField, set: &CoefficientSet, flatness: f64) -> Result<RegularityTable> {
    let grid = u.grid;
    let d = grid.dim();
    let c = u.components;
    let nodes = grid.nodes();
    let coords: Vec<Vec<f64>> = (0..nodes).map(|i| grid.node_coords(i)).collect();
    let mut buf = vec![0.0; c.max(d)];
    let mut u0_sup = 0.0f64;
    for x in &coords {
        set.u0_at(x, &mut buf[..c]);
        u0_sup = u0_sup.max(libm::sqrt(buf[..c].iter().map(|v| v * v).sum()));
    }
    let mut v_sup = Vec::with_capacity(u.times.len());
    for &t in &u.times {
        let mut s = 0.0f64;
        if set.has_forcing() {
            for x in &coords {
                set.forcing_v(t, x, &mut buf[..d])?;
                s = s.max(libm::sqrt(buf[..d].iter().map(|v| v * v).sum()));
            }
        }
        v_sup.push(s);
    }
    let mut integral = 0.0;
    let mut times = Vec::new();
    let mut ratios = Vec::new();
    for m in 1..u.times.len() {
        let t = u.times[m];
        integral += 0.5 * (t - u.times[m - 1]) * (v_sup[m] + v_sup[m - 1]);
        let grad = gradient_of(&grid, u.slice(m), c)?;
        let g = sup(grad.chunks(d * c).map(|g| libm::sqrt(g.iter().map(|v| v * v).sum())));
        let denom = u0_sup + integral;
        times.push(t);
        ratios.push(if g == 0.0 { 0.0 } else { g * libm::sqrt(t) / denom });
    }
    if times.is_empty() {
        return Err(Error::Mesh("regularity table needs at least one time node after t = 0".into()));
    }
    Ok(RegularityTable {
        max: sup(ratios.iter().copied()),
        median: median(&ratios),
        times,
        ratios,
        flatness,
    })
}

/// One pass/fail line of a validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Outcome of a validation scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub scenario: String,
    /// Physical time nodes of the profiles.
    pub times: Vec<f64>,
    /// `max_x |u_t - reference_t|` per time node.
    pub error_profile: Vec<f64>,
    pub divergence_profile: Vec<f64>,
    pub pw_profile: Vec<f64>,
    pub criteria: Vec<Criterion>,
}

impl ValidationReport {
    pub fn new(scenario: &str) -> Self {
        Self {
            scenario: scenario.into(),
            ..Self::default()
        }
    }

    /// Records `value ≤ tolerance`; NaN fails.
    pub fn check(&mut self, name: &str, value: f64, tolerance: f64) -> bool {
        let pass = value <= tolerance;
        self.criteria.push(Criterion {
            name: name.into(),
            value,
            tolerance,
            pass,
        });
        pass
    }

    pub fn sup_error(&self) -> f64 {
        sup(self.error_profile.iter().copied())
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

/// `max_x |a_t - b_t|` (Euclidean over components) per time node.
pub fn error_profile(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<Vec<f64>> {
    if a.values.len() != b.values.len() || a.components != b.components {
        return Err(Error::Shape("fields have different shapes".into()));
    }
    let c = a.components;
    Ok((0..a.times.len())
        .map(|m| {
            sup(a.slice(m).chunks(c).zip(b.slice(m).chunks(c)).map(|(x, y)| {
                libm::sqrt(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum())
            }))
        })
        .collect())
}
