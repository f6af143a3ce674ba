//! Monte Carlo estimators for `P_{t,s} f(x) = E f(X_{t,s}^x)`, the pressure
//! functionals `Q_t`, and gradients of the semigroup.
//!
//! All estimators take times on the global mesh of the configured `dt` and
//! draw particle `p`'s noise from `stream(tag, index of start time, p)`, so
//! repeated calls with the same tag share noise.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::coefficients::CoefficientSet;
use crate::config::McConfig;
use crate::error::{Error, Result};
use crate::exec::{mc_mean, Executor};
use crate::linalg;
use crate::rng::{RngContract, StreamKey, StreamTag};
use crate::sde::{Drift, Stepper, TimeMesh};
use crate::stats::{linear_fit, MCEstimate};

/// `(x, out)` closure type.
pub type PointFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Test function `f: R^d -> R^c` with optional derivatives.
#[derive(Clone)]
pub struct TestFunction {
    pub outputs: usize,
    pub value: PointFn,
    /// `out[k*d + i] = ∂_i f^k`.
    pub gradient: Option<PointFn>,
    /// `out[k] = Δf^k`.
    pub laplacian: Option<PointFn>,
}

impl core::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("TestFunction")
            .field("outputs", &self.outputs)
            .field("gradient", &self.gradient.is_some())
            .field("laplacian", &self.laplacian.is_some())
            .finish()
    }
}

impl TestFunction {
    pub fn new(outputs: usize, value: PointFn) -> Self {
        Self {
            outputs,
            value,
            gradient: None,
            laplacian: None,
        }
    }

    pub fn with_gradient(mut self, g: PointFn) -> Self {
        self.gradient = Some(g);
        self
    }

    pub fn with_laplacian(mut self, l: PointFn) -> Self {
        self.laplacian = Some(l);
        self
    }

    pub fn constant(c: Vec<f64>, dim: usize) -> Self {
        let k = c.len();
        Self::new(k, Arc::new(move |_, o| o[..k].copy_from_slice(&c)))
            .with_gradient(Arc::new(move |_, o| o[..k * dim].iter_mut().for_each(|v| *v = 0.0)))
            .with_laplacian(Arc::new(move |_, o| o[..k].iter_mut().for_each(|v| *v = 0.0)))
    }

    /// `sin(2π q x_axis)` or `cos(2π q x_axis)` with derivatives.
    pub fn fourier_mode(dim: usize, axis: usize, q: f64, cosine: bool) -> Self {
        let w = core::f64::consts::TAU * q;
        let phase = if cosine { core::f64::consts::FRAC_PI_2 } else { 0.0 };
        Self::new(1, Arc::new(move |x, o| o[0] = libm::sin(w * x[axis] + phase)))
            .with_gradient(Arc::new(move |x, o| {
                o[..dim].iter_mut().for_each(|v| *v = 0.0);
                o[axis] = w * libm::cos(w * x[axis] + phase);
            }))
            .with_laplacian(Arc::new(move |x, o| o[0] = -w * w * libm::sin(w * x[axis] + phase)))
    }

    /// The initial velocity of a coefficient set.
    pub fn initial_velocity(set: &CoefficientSet) -> Self {
        let set = set.clone();
        Self::new(set.dim(), Arc::new(move |x, o| set.u0_at(x, o)))
    }
}

/// Three gradient estimates of `∇_v P_{t,s} f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub bismut: MCEstimate,
    /// `None` when the test function has no gradient.
    pub variational: Option<MCEstimate>,
    pub finite_difference: MCEstimate,
    /// Largest pairwise `|a - b| / sqrt(se_a² + se_b²)` over components.
    pub agreement: f64,
    /// `E sup_steps ‖∇X‖`.
    pub jacobian_sup: MCEstimate,
}

/// One row of a gradient-scaling table.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub gap: f64,
    /// Largest `|∇P_{t,t+gap} f|` over the sample points.
    pub sup_grad: f64,
    pub se: f64,
    /// Largest `E sup ‖∇X‖` over the sample points.
    pub jacobian_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundReport {
    pub rows: Vec<GapRow>,
    /// Slope of `log sup_grad` against `log gap`; `None` when every gradient
    /// is statistically zero or the gaps span less than a decade.
    pub slope: Option<f64>,
    /// `max sup_grad · sqrt(gap) / ‖f‖∞`.
    pub c1: f64,
    /// `max sup_grad / ‖∇f‖∞`.
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionReport {
    pub direct: MCEstimate,
    pub nested: MCEstimate,
    /// Largest component discrepancy in combined-SE units.
    pub se_units: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardReport {
    /// Centered difference of `P_{t,·} f` at `s`.
    pub time_derivative: MCEstimate,
    /// `P_{t,s}(L_s f)`.
    pub generator: MCEstimate,
    /// Paired difference of the two.
    pub difference: MCEstimate,
    /// Largest `|difference| / se` over components.
    pub se_units: f64,
}

/// Discrepancy between two estimates in combined-SE units.
pub fn se_units(a: &MCEstimate, b: &MCEstimate) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..a.dim() {
        let diff = (a.value[k] - b.value[k]).abs();
        let se = libm::sqrt(a.std_error[k] * a.std_error[k] + b.std_error[k] * b.std_error[k]);
        worst = worst.max(ratio(diff, se));
    }
    worst
}

fn ratio(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se > 0.0 {
        diff / se
    } else {
        f64::INFINITY
    }
}

/// Estimators bound to one coefficient set, frozen drift and seed.
pub struct SemigroupEstimator<'a, D: Drift + ?Sized, E: Executor> {
    pub set: &'a CoefficientSet,
    pub drift: &'a D,
    pub mc: &'a McConfig,
    pub rng: &'a RngContract,
    pub exec: &'a E,
    /// Global mesh over `[0, T]`.
    pub mesh: TimeMesh,
}

impl<'a, D: Drift + ?Sized, E: Executor> SemigroupEstimator<'a, D, E> {
    pub fn new(
        set: &'a CoefficientSet,
        drift: &'a D,
        mc: &'a McConfig,
        rng: &'a RngContract,
        exec: &'a E,
    ) -> Result<Self> {
        mc.validate()?;
        Ok(Self {
            set,
            drift,
            mc,
            rng,
            exec,
            mesh: TimeMesh::global(set.horizon, mc.dt)?,
        })
    }

    fn stepper(&self, t: f64, s: f64) -> Result<Stepper<'_, D>> {
        if !(t <= s) {
            return Err(Error::Domain(format!("start time {t} exceeds end time {s}")));
        }
        Stepper::new(self.set, self.drift, self.mesh.span(t, s)?, self.mc)
    }

    fn check_point(&self, x: &[f64], f: Option<&TestFunction>) -> Result<()> {
        if x.len() != self.set.dim() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.set.dim()
            )));
        }
        if let Some(f) = f {
            if f.outputs == 0 || f.outputs > 9 {
                return Err(Error::Shape("test function must have 1..=9 outputs".into()));
            }
        }
        Ok(())
    }

    /// `P_{t,s} f(x)`.
    pub fn estimate_p(
        &self,
        t: f64,
        s: f64,
        x: &[f64],
        f: &TestFunction,
        n: usize,
        tag: StreamTag,
    ) -> Result<MCEstimate> {
        self.check_point(x, Some(f))?;
        let stepper = self.stepper(t, s)?;
        let key = StreamKey::new(tag, stepper.mesh.start_step as u64);
        let d = x.len();
        mc_mean(self.exec, n, self.mc.block, f.outputs, |p, out| {
            let mut stream = self.rng.stream(key, p as u64, d);
            let mut end = [0.0; 3];
            end[..d].copy_from_slice(x);
            stepper.run(p, &mut stream, x, None, |v| {
                end[..d].copy_from_slice(v.x);
                Ok(())
            })?;
            (f.value)(&end[..d], out);
            Ok(())
        })
    }

    /// `Q_t ℘(x) = E u0(X_{T-t,T}^x) - E ∫_{T-t}^T ∇℘_{T-s}(X_{T-t,s}^x) ds`
    /// for physical time `t`, all components at once; trapezoidal rule in `s`.
    pub fn estimate_q(&self, t: f64, x: &[f64], n: usize, tag: StreamTag) -> Result<MCEstimate> {
        self.check_point(x, None)?;
        let horizon = self.set.horizon;
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
        }
        let start = self.mesh.time(self.mesh.index_of(horizon - t)?);
        let stepper = self.stepper(start, horizon)?;
        let key = StreamKey::new(tag, stepper.mesh.start_step as u64);
        let d = x.len();
        let dt = stepper.mesh.dt;
        mc_mean(self.exec, n, self.mc.block, d, |p, out| {
            let mut stream = self.rng.stream(key, p as u64, d);
            let mut end = [0.0; 3];
            end[..d].copy_from_slice(x);
            let mut integral = [0.0; 3];
            let mut prev = self.set.pressure_gradient(horizon - start, x)?;
            stepper.run(p, &mut stream, x, None, |v| {
                let s = stepper.mesh.time(v.step);
                let g = self.set.pressure_gradient(horizon - s, v.x)?;
                for a in 0..d {
                    integral[a] += 0.5 * dt * (prev[a] + g[a]);
                }
                prev = g;
                end[..d].copy_from_slice(v.x);
                Ok(())
            })?;
            self.set.u0_at(&end[..d], out);
            for a in 0..d {
                out[a] -= integral[a];
            }
            Ok(())
        })
    }

    /// `(√(2a))⁻¹` at SDE time `s`.
    fn inverse_noise(&self, s: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = x.len();
        let t = self.set.horizon - s;
        match self.set.is_isotropic() {
            true => {
                out[..d * d].iter_mut().for_each(|v| *v = 0.0);
                let inv = 1.0 / libm::sqrt(2.0 * self.set.kappa);
                for i in 0..d {
                    out[i * d + i] = inv;
                }
            }
            false => {
                let mut a = [0.0; 9];
                self.set.diffusion_at(t, x, &mut a[..d * d]);
                let (w, v) = linalg::symmetric_eigen(&a[..d * d], d);
                if w.iter().any(|&l| !(l > 0.0)) {
                    return Err(Error::Coefficient("diffusion matrix is not positive definite".into()));
                }
                let m = linalg::spectral_map(&w, &v, d, |l| 1.0 / libm::sqrt(2.0 * l));
                out[..d * d].copy_from_slice(&m);
            }
        }
        Ok(())
    }

    /// Bismut, variational and common-random-number finite-difference
    /// estimates of `∇_v P_{t,s} f(x)`.
    ///
    /// The Bismut weight is `(s-t)⁻¹ Σ_m ⟨(√(2a))⁻¹(X_m) J_{m+1} v, ΔW_m⟩`,
    /// a left-point sum in which `J_{m+1}` depends only on `X_m`.
    #[allow(clippy::too_many_arguments)]
    pub fn bismut_gradient(
        &self,
        t: f64,
        s: f64,
        x: &[f64],
        f: &TestFunction,
        v: &[f64],
        n: usize,
        tag: StreamTag,
    ) -> Result<GradientEstimate> {
        self.check_point(x, Some(f))?;
        self.check_point(v, None)?;
        if !(s > t) {
            return Err(Error::Domain(format!(
                "gradient estimate needs s > t (got t = {t}, s = {s})"
            )));
        }
        let stepper = self.stepper(t, s)?;
        let key = StreamKey::new(tag, stepper.mesh.start_step as u64);
        let d = x.len();
        let c = f.outputs;
        let has_grad = f.gradient.is_some();
        let span = s - t;
        let xn = libm::sqrt(x.iter().map(|a| a * a).sum::<f64>());
        let eps = self.mc.fd_eps * (1.0 + xn);
        let mut xp = [0.0; 3];
        let mut xm = [0.0; 3];
        for a in 0..d {
            xp[a] = x[a] + eps * v[a];
            xm[a] = x[a] - eps * v[a];
        }
        // layout: bismut(c) | fd(c) | jacobian sup | variational(c)
        let width = 2 * c + 1 + if has_grad { c } else { 0 };
        let est = mc_mean(self.exec, n, self.mc.block, width, |p, out| {
            let mut stream = self.rng.stream(key, p as u64, d);
            let mut jac = linalg::identity(d);
            let mut end = [0.0; 3];
            end[..d].copy_from_slice(x);
            let mut weight = 0.0;
            let mut jsup = 1.0f64;
            let mut sinv = [0.0; 9];
            let mut jv = [0.0; 3];
            let mut y = [0.0; 3];
            stepper.run(p, &mut stream, x, Some(&mut jac), |view| {
                let j = view.jac.unwrap();
                linalg::matvec(j, v, d, &mut jv[..d]);
                self.inverse_noise(stepper.mesh.time(view.step - 1), view.x_prev, &mut sinv)?;
                linalg::matvec(&sinv[..d * d], &jv[..d], d, &mut y[..d]);
                weight += linalg::dot(&y[..d], view.dw);
                jsup = jsup.max(linalg::operator_norm(j, d));
                end[..d].copy_from_slice(view.x);
                Ok(())
            })?;
            let mut fx = [0.0; 9];
            (f.value)(&end[..d], &mut fx[..c]);
            for k in 0..c {
                out[k] = fx[k] * weight / span;
            }
            if let Some(g) = &f.gradient {
                let mut gf = [0.0; 27];
                (g)(&end[..d], &mut gf[..c * d]);
                linalg::matvec(&jac, v, d, &mut jv[..d]);
                for k in 0..c {
                    out[2 * c + 1 + k] = linalg::dot(&gf[k * d..(k + 1) * d], &jv[..d]);
                }
            }
            out[2 * c] = jsup;
            let mut ends = [[0.0; 3]; 2];
            for (side, start) in [&xp[..d], &xm[..d]].into_iter().enumerate() {
                let mut stream = self.rng.stream(key, p as u64, d);
                ends[side][..d].copy_from_slice(start);
                stepper.run(p, &mut stream, start, None, |view| {
                    ends[side][..d].copy_from_slice(view.x);
                    Ok(())
                })?;
            }
            let mut fp = [0.0; 9];
            let mut fm = [0.0; 9];
            (f.value)(&ends[0][..d], &mut fp[..c]);
            (f.value)(&ends[1][..d], &mut fm[..c]);
            for k in 0..c {
                out[c + k] = (fp[k] - fm[k]) / (2.0 * eps);
            }
            Ok(())
        })?;
        let pick = |lo: usize, len: usize| MCEstimate {
            value: est.value[lo..lo + len].to_vec(),
            std_error: est.std_error[lo..lo + len].to_vec(),
            n_samples: est.n_samples,
        };
        let bismut = pick(0, c);
        let finite_difference = pick(c, c);
        let variational = has_grad.then(|| pick(2 * c + 1, c));
        let mut agreement = se_units(&bismut, &finite_difference);
        if let Some(var) = &variational {
            agreement = agreement.max(se_units(&bismut, var)).max(se_units(var, &finite_difference));
        }
        Ok(GradientEstimate {
            bismut,
            variational,
            finite_difference,
            agreement,
            jacobian_sup: pick(2 * c, 1),
        })
    }

    /// Tabulates `sup_x |∇P_{t,t+gap} f(x)|` (Bismut, Euclidean norm over
    /// axes, scalar `f`) against `gap` and fits the log-log slope.
    #[allow(clippy::too_many_arguments)]
    pub fn gradient_bound_check(
        &self,
        t: f64,
        f: &TestFunction,
        f_sup: f64,
        grad_sup: f64,
        gaps: &[f64],
        points: &[Vec<f64>],
        n: usize,
        tag: StreamTag,
    ) -> Result<GradientBoundReport> {
        if f.outputs != 1 {
            return Err(Error::Shape("gradient scaling needs a scalar test function".into()));
        }
        let d = self.set.dim();
        let mut rows = Vec::with_capacity(gaps.len());
        let mut all_zero = true;
        for &gap in gaps {
            let mut row = GapRow {
                gap,
                sup_grad: 0.0,
                se: 0.0,
                jacobian_bound: 0.0,
            };
            for x in points {
                let mut norm2 = 0.0;
                let mut se2 = 0.0;
                for axis in 0..d {
                    let mut e = vec![0.0; d];
                    e[axis] = 1.0;
                    let g = self.bismut_gradient(t, t + gap, x, f, &e, n, tag)?;
                    norm2 += g.bismut.value[0] * g.bismut.value[0];
                    se2 += g.bismut.std_error[0] * g.bismut.std_error[0];
                    row.jacobian_bound = row.jacobian_bound.max(g.jacobian_sup.value[0]);
                }
                let norm = libm::sqrt(norm2);
                if norm > row.sup_grad {
                    row.sup_grad = norm;
                    row.se = libm::sqrt(se2);
                }
            }
            if row.sup_grad > 4.0 * row.se {
                all_zero = false;
            }
            rows.push(row);
        }
        let span = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            / gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let slope = if all_zero || !(span >= 10.0 * (1.0 - 1e-9)) {
            None
        } else {
            let lx: Vec<f64> = rows.iter().map(|r| libm::log(r.gap)).collect();
            let ly: Vec<f64> = rows.iter().map(|r| libm::log(r.sup_grad)).collect();
            linear_fit(&lx, &ly).map(|(m, _)| m)
        };
        let c1 = rows
            .iter()
            .map(|r| r.sup_grad * libm::sqrt(r.gap) / f_sup)
            .fold(0.0, f64::max);
        let c2 = rows.iter().map(|r| r.sup_grad / grad_sup).fold(0.0, f64::max);
        Ok(GradientBoundReport { rows, slope, c1, c2 })
    }

    /// Compares `P_{t,r} f(x)` with the nested estimate `P_{t,s}(P_{s,r} f)(x)`
    /// whose inner ensembles use streams independent of the outer one.
    #[allow(clippy::too_many_arguments)]
    pub fn composition_check(
        &self,
        t: f64,
        s: f64,
        r: f64,
        x: &[f64],
        f: &TestFunction,
        n_outer: usize,
        n_inner: usize,
    ) -> Result<CompositionReport> {
        let direct = self.estimate_p(t, r, x, f, n_outer, StreamTag::ESTIMATE)?;
        let outer = self.stepper(t, s)?;
        let inner = self.stepper(s, r)?;
        let outer_key = StreamKey::new(StreamTag::OUTER, outer.mesh.start_step as u64);
        let d = x.len();
        let c = f.outputs;
        let nested = mc_mean(self.exec, n_outer, self.mc.block, c, |p, out| {
            let mut stream = self.rng.stream(outer_key, p as u64, d);
            let mut mid = [0.0; 3];
            mid[..d].copy_from_slice(x);
            outer.run(p, &mut stream, x, None, |v| {
                mid[..d].copy_from_slice(v.x);
                Ok(())
            })?;
            let key = StreamKey::new(StreamTag::INNER.child(p as u64), inner.mesh.start_step as u64);
            let inner_mean = mc_mean(&crate::exec::Sequential, n_inner, usize::MAX, c, |q, o| {
                let mut st = self.rng.stream(key, q as u64, d);
                let mut end = mid;
                inner.run(q, &mut st, &mid[..d], None, |v| {
                    end[..d].copy_from_slice(v.x);
                    Ok(())
                })?;
                (f.value)(&end[..d], o);
                Ok(())
            })?;
            out[..c].copy_from_slice(&inner_mean.value);
            Ok(())
        })?;
        let se_units = se_units(&direct, &nested);
        Ok(CompositionReport {
            direct,
            nested,
            se_units,
        })
    }

    /// Centered difference in `s` of `P_{t,s} f(x)` over `±half_steps` mesh
    /// steps against `P_{t,s}(κΔf + ⟨drift_s, ∇f⟩)(x)`, paired on the same paths.
    #[allow(clippy::too_many_arguments)]
    pub fn kolmogorov_forward(
        &self,
        t: f64,
        s: f64,
        half_steps: usize,
        x: &[f64],
        f: &TestFunction,
        n: usize,
        tag: StreamTag,
    ) -> Result<ForwardReport> {
        self.check_point(x, Some(f))?;
        let (Some(grad), Some(lap)) = (&f.gradient, &f.laplacian) else {
            return Err(Error::Domain("forward check needs the gradient and Laplacian of f".into()));
        };
        if !self.set.is_isotropic() {
            return Err(Error::Coefficient(
                "forward check is implemented for isotropic diffusion only".into(),
            ));
        }
        let centre = self.mesh.index_of(s)?;
        let t_idx = self.mesh.index_of(t)?;
        if half_steps == 0 || centre < t_idx + half_steps || centre + half_steps > self.mesh.total_steps {
            return Err(Error::Mesh(format!(
                "s = {s} ± {half_steps} steps must stay inside [t, T]"
            )));
        }
        let stepper = self.stepper(t, self.mesh.time(centre + half_steps))?;
        let key = StreamKey::new(tag, t_idx as u64);
        let d = x.len();
        let c = f.outputs;
        let h = half_steps as f64 * self.mesh.dt;
        let kappa = self.set.kappa;
        let est = mc_mean(self.exec, n, self.mc.block, 3 * c, |p, out| {
            let mut stream = self.rng.stream(key, p as u64, d);
            let mut before = [0.0; 3];
            let mut mid = [0.0; 3];
            let mut after = [0.0; 3];
            let mut record = |step: usize, y: &[f64]| {
                if step == centre - half_steps {
                    before[..d].copy_from_slice(y);
                }
                if step == centre {
                    mid[..d].copy_from_slice(y);
                }
                if step == centre + half_steps {
                    after[..d].copy_from_slice(y);
                }
            };
            record(t_idx, x);
            stepper.run(p, &mut stream, x, None, |v| {
                record(v.step, v.x);
                Ok(())
            })?;
            let mut fa = [0.0; 9];
            let mut fb = [0.0; 9];
            (f.value)(&after[..d], &mut fa[..c]);
            (f.value)(&before[..d], &mut fb[..c]);
            let mut gf = [0.0; 27];
            let mut lf = [0.0; 9];
            let mut b = [0.0; 3];
            grad(&mid[..d], &mut gf[..c * d]);
            lap(&mid[..d], &mut lf[..c]);
            self.drift.eval(s, &mid[..d], &mut b[..d]);
            for k in 0..c {
                let lhs = (fa[k] - fb[k]) / (2.0 * h);
                let rhs = kappa * lf[k] + linalg::dot(&b[..d], &gf[k * d..(k + 1) * d]);
                out[k] = lhs;
                out[c + k] = rhs;
                out[2 * c + k] = lhs - rhs;
            }
            Ok(())
        })?;
        let pick = |lo: usize| MCEstimate {
            value: est.value[lo..lo + c].to_vec(),
            std_error: est.std_error[lo..lo + c].to_vec(),
            n_samples: est.n_samples,
        };
        let difference = pick(2 * c);
        let se_units = (0..c)
            .map(|k| ratio(difference.value[k].abs(), difference.std_error[k]))
            .fold(0.0, f64::max);
        Ok(ForwardReport {
            time_derivative: pick(0),
            generator: pick(c),
            difference,
            se_units,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Pressure, ScenarioPreset};
    use crate::exec::Sequential;
    use crate::fields::DomainDescriptor;
    use crate::sde::{FnDrift, ZeroDrift};
    use core::f64::consts::TAU;

    fn heat(d: usize, kappa: f64, horizon: f64) -> CoefficientSet {
        ScenarioPreset::ZeroAll
            .build(DomainDescriptor::torus(d), horizon, kappa)
            .unwrap()
    }

    fn mc(horizon: f64) -> McConfig {
        McConfig::for_horizon(horizon, 100)
    }

    fn wobble() -> FnDrift {
        FnDrift {
            dim: 1,
            f: Arc::new(|s, x, o| o[0] = -0.4 * libm::sin(TAU * x[0]) * (1.0 - 0.5 * s)),
            jac: None,
        }
    }

    #[test]
    fn constant_functions_are_conserved_exactly() {
        let set = heat(1, 0.1, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(1);
        let drift = wobble();
        let est = SemigroupEstimator::new(&set, &drift, &cfg, &rng, &Sequential).unwrap();
        let one = est.estimate_p(0.1, 0.4, &[0.3], &TestFunction::constant(vec![1.0], 1), 500, StreamTag::ESTIMATE).unwrap();
        assert_eq!((one.value[0], one.std_error[0]), (1.0, 0.0));
        let c = est.estimate_p(0.0, 0.5, &[0.3], &TestFunction::constant(vec![0.3, -0.2], 1), 64, StreamTag::ESTIMATE).unwrap();
        assert_eq!(c.value, vec![0.3, -0.2]);
        assert_eq!(c.std_error, vec![0.0, 0.0]);
    }

    #[test]
    fn heat_semigroup_damps_fourier_mode() {
        let kappa = 0.1;
        let set = heat(1, kappa, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(2);
        let est = SemigroupEstimator::new(&set, &ZeroDrift(1), &cfg, &rng, &Sequential).unwrap();
        let x = 0.2;
        let r = est.estimate_p(0.1, 0.35, &[x], &TestFunction::fourier_mode(1, 0, 1.0, false), 100_000, StreamTag::ESTIMATE).unwrap();
        let exact = libm::exp(-TAU * TAU * kappa * 0.25) * libm::sin(TAU * x);
        assert!((r.value[0] - exact).abs() <= 4.0 * r.std_error[0], "{} vs {exact}", r.value[0]);
    }

    #[test]
    fn q_without_pressure_is_semigroup_of_u0() {
        let set = ScenarioPreset::Burgers1D { amplitude: 0.5 }
            .build(DomainDescriptor::torus(1), 0.5, 0.1)
            .unwrap();
        let cfg = mc(0.5);
        let rng = RngContract::new(3);
        let drift = wobble();
        let est = SemigroupEstimator::new(&set, &drift, &cfg, &rng, &Sequential).unwrap();
        let q = est.estimate_q(0.3, &[0.1], 400, StreamTag::ESTIMATE).unwrap();
        let p = est.estimate_p(0.2, 0.5, &[0.1], &TestFunction::initial_velocity(&set), 400, StreamTag::ESTIMATE).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn q_with_constant_pressure_gradient() {
        let mut set = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::torus(2), 0.5, 0.1)
            .unwrap();
        let g = [0.7, -1.1];
        set.pressure = Pressure::Analytic {
            value: Arc::new(move |_, x| g[0] * x[0] + g[1] * x[1]),
            gradient: Arc::new(move |_, _, o| o.copy_from_slice(&g)),
            laplacian: None,
        };
        let cfg = mc(0.5);
        let rng = RngContract::new(4);
        let est = SemigroupEstimator::new(&set, &ZeroDrift(2), &cfg, &rng, &Sequential).unwrap();
        let q = est.estimate_q(0.3, &[0.1, 0.9], 50, StreamTag::ESTIMATE).unwrap();
        for a in 0..2 {
            assert!((q.value[a] + g[a] * 0.3).abs() < 1e-12);
            assert_eq!(q.std_error[a], 0.0);
        }
    }

    #[test]
    fn q_at_time_zero_is_initial_velocity() {
        let set = ScenarioPreset::TaylorGreen2D { amplitude: 0.5, pressure: true }
            .build(DomainDescriptor::torus(2), 0.25, 0.1)
            .unwrap();
        let cfg = mc(0.25);
        let rng = RngContract::new(5);
        let est = SemigroupEstimator::new(&set, &ZeroDrift(2), &cfg, &rng, &Sequential).unwrap();
        let x = [0.3, 0.15];
        let q = est.estimate_q(0.0, &x, 10, StreamTag::ESTIMATE).unwrap();
        let mut u = [0.0; 2];
        set.u0_at(&x, &mut u);
        assert_eq!(q.value, u.to_vec());
        assert_eq!(q.std_error, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_triad_on_heat_kernel() {
        let kappa = 0.1;
        let set = heat(1, kappa, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(6);
        let est = SemigroupEstimator::new(&set, &ZeroDrift(1), &cfg, &rng, &Sequential).unwrap();
        let x = 0.15;
        let g = est.bismut_gradient(0.1, 0.3, &[x], &TestFunction::fourier_mode(1, 0, 1.0, false), &[1.0], 100_000, StreamTag::GRADIENT).unwrap();
        let exact = TAU * libm::exp(-TAU * TAU * kappa * 0.2) * libm::cos(TAU * x);
        assert!(g.agreement <= 4.0, "agreement {}", g.agreement);
        for e in [&g.bismut, g.variational.as_ref().unwrap(), &g.finite_difference] {
            assert!((e.value[0] - exact).abs() <= 4.0 * e.std_error[0], "{} vs {exact}", e.value[0]);
        }
        assert_eq!(g.jacobian_sup.value[0], 1.0);
    }

    #[test]
    fn gradient_of_constant_and_linearity_in_direction() {
        let set = heat(1, 0.1, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(7);
        let drift = wobble();
        let est = SemigroupEstimator::new(&set, &drift, &cfg, &rng, &Sequential).unwrap();
        let one = TestFunction::constant(vec![1.0], 1);
        let g = est.bismut_gradient(0.0, 0.25, &[0.4], &one, &[1.0], 20_000, StreamTag::GRADIENT).unwrap();
        assert!(g.bismut.value[0].abs() <= 4.0 * g.bismut.std_error[0]);
        assert_eq!(g.variational.unwrap().value[0], 0.0);
        let f = TestFunction::fourier_mode(1, 0, 1.0, true);
        let a = est.bismut_gradient(0.0, 0.25, &[0.4], &f, &[0.5], 2000, StreamTag::GRADIENT).unwrap();
        let b = est.bismut_gradient(0.0, 0.25, &[0.4], &f, &[1.0], 2000, StreamTag::GRADIENT).unwrap();
        assert_eq!(b.bismut.value[0], 2.0 * a.bismut.value[0]);
        assert_eq!(b.variational.unwrap().value[0], 2.0 * a.variational.unwrap().value[0]);
        assert!(matches!(
            est.bismut_gradient(0.25, 0.25, &[0.4], &f, &[1.0], 10, StreamTag::GRADIENT),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gradient_triad_under_nonlinear_drift() {
        let set = heat(1, 0.1, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(8);
        let drift = wobble();
        let est = SemigroupEstimator::new(&set, &drift, &cfg, &rng, &Sequential).unwrap();
        let f = TestFunction::fourier_mode(1, 0, 1.0, true);
        let g = est.bismut_gradient(0.05, 0.4, &[0.35], &f, &[1.0], 40_000, StreamTag::GRADIENT).unwrap();
        assert!(g.agreement <= 4.0, "agreement {}", g.agreement);
    }

    #[test]
    fn heat_gradient_scales_like_inverse_root() {
        let set = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::free_space(1, -1.0, 1.0), 0.2, 0.1)
            .unwrap();
        let cfg = McConfig {
            dt: 1e-3,
            ..McConfig::for_horizon(0.2, 100)
        };
        let rng = RngContract::new(9);
        let est = SemigroupEstimator::new(&set, &ZeroDrift(1), &cfg, &rng, &Sequential).unwrap();
        let w = 1e-3;
        let step = TestFunction::new(1, Arc::new(move |x, o| o[0] = libm::tanh(x[0] / w)));
        let gaps = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
        let points = [vec![0.0], vec![0.01]];
        let r = est.gradient_bound_check(0.0, &step, 1.0, 1.0 / w, &gaps, &points, 20_000, StreamTag::GRADIENT).unwrap();
        let slope = r.slope.unwrap();
        assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");
        let flat = est
            .gradient_bound_check(0.0, &TestFunction::constant(vec![2.0], 1), 2.0, 1.0, &gaps, &points, 2000, StreamTag::GRADIENT)
            .unwrap();
        assert_eq!(flat.slope, None);
    }

    #[test]
    fn gradient_bounded_by_chain_rule_branch() {
        let set = heat(1, 0.1, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(10);
        let drift = wobble();
        let est = SemigroupEstimator::new(&set, &drift, &cfg, &rng, &Sequential).unwrap();
        // large sup, small gradient
        let f = TestFunction::new(1, Arc::new(|x, o| o[0] = 50.0 + 0.05 * libm::sin(TAU * x[0])));
        let grad_sup = 0.05 * TAU;
        let r = est.gradient_bound_check(0.0, &f, 50.05, grad_sup, &[0.25, 0.5], &[vec![0.1], vec![0.6]], 4000, StreamTag::GRADIENT).unwrap();
        for row in &r.rows {
            assert!(row.sup_grad - 4.0 * row.se <= 1.05 * grad_sup * row.jacobian_bound);
        }
    }

    #[test]
    fn nested_composition_matches_direct() {
        let set = heat(1, 0.1, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(11);
        let drift = wobble();
        let est = SemigroupEstimator::new(&set, &drift, &cfg, &rng, &Sequential).unwrap();
        let f = TestFunction::fourier_mode(1, 0, 1.0, true);
        let r = est.composition_check(0.0, 0.2, 0.45, &[0.3], &f, 4000, 200).unwrap();
        assert!(r.se_units <= 4.0, "{r:?}");
    }

    #[test]
    fn forward_equation_on_heat_kernel() {
        let kappa = 0.1;
        let set = heat(1, kappa, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(12);
        let est = SemigroupEstimator::new(&set, &ZeroDrift(1), &cfg, &rng, &Sequential).unwrap();
        let f = TestFunction::fourier_mode(1, 0, 1.0, false);
        let x = 0.2;
        let r = est.kolmogorov_forward(0.0, 0.25, 10, &[x], &f, 50_000, StreamTag::ESTIMATE).unwrap();
        assert!(r.se_units <= 4.0);
        let exact = -TAU * TAU * kappa * libm::exp(-TAU * TAU * kappa * 0.25) * libm::sin(TAU * x);
        for e in [&r.time_derivative, &r.generator] {
            assert!((e.value[0] - exact).abs() <= 4.0 * e.std_error[0], "{} vs {exact}", e.value[0]);
        }
        let one = est.kolmogorov_forward(0.0, 0.25, 10, &[x], &TestFunction::constant(vec![1.0], 1), 100, StreamTag::ESTIMATE).unwrap();
        assert_eq!(one.difference.value[0], 0.0);
    }

    #[test]
    fn forward_equation_under_drift() {
        let set = heat(1, 0.1, 0.5);
        let cfg = mc(0.5);
        let rng = RngContract::new(13);
        let drift = wobble();
        let est = SemigroupEstimator::new(&set, &drift, &cfg, &rng, &Sequential).unwrap();
        let f = TestFunction::fourier_mode(1, 0, 1.0, true);
        let r = est.kolmogorov_forward(0.1, 0.3, 10, &[0.15], &f, 50_000, StreamTag::ESTIMATE).unwrap();
        assert!(r.se_units <= 4.0, "{r:?}");
    }
}
