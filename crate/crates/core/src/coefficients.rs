//! Problem data: diffusion `a`, drift `b = b0 + b1`, forcing `V`, initial
//! datum `u0`, pressure `℘`, viscosity `κ` and horizon `T`.
//!
//! All closures take physical time `t`. On the torus every evaluation wraps
//! its point into `[0,1)^d` first, so coefficients are exactly invariant under
//! integer shifts.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fields::{periodic_wrap, DomainDescriptor, DomainKind, SpaceTimeField};
use crate::linalg;
use crate::navier_stokes::taylor_green_at;

/// `(t, x, out)`.
pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x) -> value`.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Diffusion matrix `a`.
#[derive(Clone)]
pub enum Diffusion {
    /// `a = κ I`.
    Isotropic,
    /// General symmetric positive-definite `a(t, x)`, written row-major into `out`.
    Field(VectorFn),
}

/// Pressure `℘`, closed form or grid-backed.
#[derive(Clone)]
pub enum Pressure {
    Zero,
    Analytic {
        value: ScalarFn,
        gradient: VectorFn,
        laplacian: Option<ScalarFn>,
    },
    /// Scalar field in physical time; derivatives by centered differences.
    Grid(SpaceTimeField),
}

#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    pub domain: DomainDescriptor,
    pub horizon: f64,
    pub kappa: f64,
    pub diffusion: Diffusion,
    pub b0: Option<VectorFn>,
    pub b1: Option<VectorFn>,
    pub forcing: Option<VectorFn>,
    /// Initial datum; the time argument is ignored.
    pub u0: VectorFn,
    pub pressure: Pressure,
}

impl core::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .field("kappa", &self.kappa)
            .finish_non_exhaustive()
    }
}

/// Writes `x` wrapped into `[0,1)^d` on the torus (copied otherwise) into `buf`.
#[inline]
fn wrapped<'a>(domain: &DomainDescriptor, x: &[f64], buf: &'a mut [f64; 3]) -> &'a [f64] {
    let d = x.len();
    match domain.kind {
        DomainKind::Torus => {
            for a in 0..d {
                buf[a] = crate::fields::wrap_unit(x[a]);
            }
        }
        DomainKind::FreeSpace => buf[..d].copy_from_slice(x),
    }
    &buf[..d]
}

impl CoefficientSet {
    /// Isotropic (`a = κI`), zero drift and forcing, zero pressure.
    pub fn new(
        name: &str,
        domain: DomainDescriptor,
        horizon: f64,
        kappa: f64,
        u0: VectorFn,
    ) -> Result<Self> {
        domain.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::Configuration(format!("T must be > 0, got {horizon}")));
        }
        if !(kappa > 0.0) {
            return Err(Error::Configuration(format!("kappa must be > 0, got {kappa}")));
        }
        Ok(Self {
            name: name.into(),
            domain,
            horizon,
            kappa,
            diffusion: Diffusion::Isotropic,
            b0: None,
            b1: None,
            forcing: None,
            u0,
            pressure: Pressure::Zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self.diffusion, Diffusion::Isotropic)
    }

    pub fn has_drift(&self) -> bool {
        self.b0.is_some() || self.b1.is_some()
    }

    pub fn has_forcing(&self) -> bool {
        self.forcing.is_some() || !matches!(self.pressure, Pressure::Zero)
    }

    /// `a(t, x)`, row-major.
    pub fn diffusion_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        match &self.diffusion {
            Diffusion::Isotropic => {
                out[..d * d].iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    out[i * d + i] = self.kappa;
                }
            }
            Diffusion::Field(f) => {
                let mut buf = [0.0; 3];
                f(t, wrapped(&self.domain, x, &mut buf), out)
            }
        }
    }

    /// `sqrt(2 a(t, x))`; short-circuits to `sqrt(2κ) I` for isotropic diffusion.
    pub fn noise_matrix(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        match &self.diffusion {
            Diffusion::Isotropic => {
                let mut m = vec![0.0; d * d];
                let s = libm::sqrt(2.0 * self.kappa);
                for i in 0..d {
                    m[i * d + i] = s;
                }
                Ok(m)
            }
            Diffusion::Field(_) => {
                let mut a = vec![0.0; d * d];
                self.diffusion_at(t, x, &mut a);
                sqrt_2a(&a, d)
            }
        }
    }

    /// `b(t, x) = b0 + b1`.
    pub fn drift_b(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out[..d].iter_mut().for_each(|v| *v = 0.0);
        if !self.has_drift() {
            return;
        }
        let mut buf = [0.0; 3];
        let xw = wrapped(&self.domain, x, &mut buf);
        let mut tmp = [0.0; 3];
        for f in [&self.b0, &self.b1].into_iter().flatten() {
            f(t, xw, &mut tmp[..d]);
            for a in 0..d {
                out[a] += tmp[a];
            }
        }
    }

    pub fn u0_at(&self, x: &[f64], out: &mut [f64]) {
        let mut buf = [0.0; 3];
        (self.u0)(0.0, wrapped(&self.domain, x, &mut buf), out)
    }

    pub fn pressure_value(&self, t: f64, x: &[f64]) -> Result<f64> {
        let mut buf = [0.0; 3];
        let xw = wrapped(&self.domain, x, &mut buf);
        match &self.pressure {
            Pressure::Zero => Ok(0.0),
            Pressure::Analytic { value, .. } => Ok(value(t, xw)),
            Pressure::Grid(field) => Ok(field.interpolate(t, xw)?[0]),
        }
    }

    /// `∇℘_t(x)`: closed form when available, otherwise centered differences
    /// of the grid field with the grid spacing as step.
    pub fn pressure_gradient(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut buf = [0.0; 3];
        let xw = wrapped(&self.domain, x, &mut buf);
        let mut out = vec![0.0; d];
        match &self.pressure {
            Pressure::Zero => {}
            Pressure::Analytic { gradient, .. } => gradient(t, xw, &mut out),
            Pressure::Grid(field) => {
                let h = field.grid.h();
                let mut xp = [0.0; 3];
                for i in 0..d {
                    xp[..d].copy_from_slice(xw);
                    xp[i] = xw[i] + h;
                    let p = field.interpolate(t, &periodic_wrap(&xp[..d], &self.domain))?[0];
                    xp[i] = xw[i] - h;
                    let m = field.interpolate(t, &periodic_wrap(&xp[..d], &self.domain))?[0];
                    out[i] = (p - m) / (2.0 * h);
                }
            }
        }
        Ok(out)
    }

    /// `Δ℘_t(x)`: closed form when available, otherwise the 2d+1 point stencil
    /// with step `h` (grid spacing for grid pressures).
    pub fn pressure_laplacian(&self, t: f64, x: &[f64], h: f64) -> Result<f64> {
        if let Pressure::Zero = self.pressure {
            return Ok(0.0);
        }
        if let Pressure::Analytic {
            laplacian: Some(lap),
            ..
        } = &self.pressure
        {
            let mut buf = [0.0; 3];
            return Ok(lap(t, wrapped(&self.domain, x, &mut buf)));
        }
        let h = match &self.pressure {
            Pressure::Grid(f) => f.grid.h(),
            _ => h,
        };
        let d = self.dim();
        let centre = self.pressure_value(t, x)?;
        let mut acc = 0.0;
        let mut xp = [0.0; 3];
        for i in 0..d {
            xp[..d].copy_from_slice(x);
            xp[i] = x[i] + h;
            acc += self.pressure_value(t, &xp[..d])?;
            xp[i] = x[i] - h;
            acc += self.pressure_value(t, &xp[..d])?;
            acc -= 2.0 * centre;
        }
        Ok(acc / (h * h))
    }

    /// `V_t(x) = forcing_t(x) - ∇℘_t(x)`.
    pub fn forcing_v(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let grad = self.pressure_gradient(t, x)?;
        for a in 0..d {
            out[a] = -grad[a];
        }
        if let Some(f) = &self.forcing {
            let mut buf = [0.0; 3];
            let mut tmp = [0.0; 3];
            f(t, wrapped(&self.domain, x, &mut buf), &mut tmp[..d]);
            for a in 0..d {
                out[a] += tmp[a];
            }
        }
        Ok(())
    }
}

/// Symmetric positive-definite square root of `2a`.
pub fn sqrt_2a(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(Error::Shape(format!(
            "diffusion matrix has {} entries, expected {}",
            a.len(),
            d * d
        )));
    }
    if linalg::asymmetry(a, d) > 1e-12 {
        return Err(Error::Coefficient("diffusion matrix is not symmetric".into()));
    }
    let (w, v) = linalg::symmetric_eigen(a, d);
    if let Some(bad) = w.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Coefficient(format!(
            "diffusion matrix is not positive definite (eigenvalue {bad})"
        )));
    }
    Ok(linalg::spectral_map(&w, &v, d, |l| libm::sqrt(2.0 * l)))
}

/// Named problem presets.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioPreset {
    /// `u0 = 0`, no drift, forcing or pressure.
    ZeroAll,
    /// `u0 ≡ c`; the dimension is `c.len()`.
    ConstantU0(Vec<f64>),
    /// `d = 1` torus, `u0 = A sin 2πx`, zero pressure.
    Burgers1D { amplitude: f64 },
    /// `d = 2` torus, period-1 Taylor-Green vortex. With `pressure = false`
    /// the exact pressure is dropped (negative control).
    TaylorGreen2D { amplitude: f64, pressure: bool },
}

impl ScenarioPreset {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioPreset::ZeroAll => "zero",
            ScenarioPreset::ConstantU0(_) => "constant",
            ScenarioPreset::Burgers1D { .. } => "burgers1d",
            ScenarioPreset::TaylorGreen2D { pressure: true, .. } => "taylor-green",
            ScenarioPreset::TaylorGreen2D { pressure: false, .. } => "taylor-green-nopressure",
        }
    }

    /// Builds the coefficient set. `domain` supplies kind and dimension for
    /// `ZeroAll`; the other presets fix the dimension themselves and must
    /// agree with it.
    pub fn build(&self, domain: DomainDescriptor, horizon: f64, kappa: f64) -> Result<CoefficientSet> {
        let require = |kind: Option<DomainKind>, dim: usize| -> Result<()> {
            if domain.dim != dim || kind.is_some_and(|k| k != domain.kind) {
                return Err(Error::Scenario(format!(
                    "preset {} needs dimension {dim}{}, got {:?} of dimension {}",
                    self.name(),
                    if kind.is_some() { " on the torus" } else { "" },
                    domain.kind,
                    domain.dim
                )));
            }
            Ok(())
        };
        match self {
            ScenarioPreset::ZeroAll => {
                let d = domain.dim;
                CoefficientSet::new(
                    self.name(),
                    domain,
                    horizon,
                    kappa,
                    Arc::new(move |_, _, o: &mut [f64]| o[..d].iter_mut().for_each(|v| *v = 0.0)),
                )
            }
            ScenarioPreset::ConstantU0(c) => {
                require(None, c.len())?;
                let c = c.clone();
                CoefficientSet::new(
                    self.name(),
                    domain,
                    horizon,
                    kappa,
                    Arc::new(move |_, _, o: &mut [f64]| o[..c.len()].copy_from_slice(&c)),
                )
            }
            ScenarioPreset::Burgers1D { amplitude } => {
                require(Some(DomainKind::Torus), 1)?;
                let a = *amplitude;
                CoefficientSet::new(
                    self.name(),
                    domain,
                    horizon,
                    kappa,
                    Arc::new(move |_, x, o: &mut [f64]| o[0] = a * libm::sin(2.0 * PI * x[0])),
                )
            }
            ScenarioPreset::TaylorGreen2D { amplitude, pressure } => {
                require(Some(DomainKind::Torus), 2)?;
                let a = *amplitude;
                let mut set = CoefficientSet::new(
                    self.name(),
                    domain,
                    horizon,
                    kappa,
                    Arc::new(move |_, x, o: &mut [f64]| {
                        let (v, _) = taylor_green_at(a, kappa, 0.0, [x[0], x[1]]);
                        o[..2].copy_from_slice(&v);
                    }),
                )?;
                if *pressure {
                    set.pressure = taylor_green_pressure(a, kappa);
                }
                Ok(set)
            }
        }
    }
}

/// Closed-form Taylor-Green pressure with gradient and Laplacian.
pub fn taylor_green_pressure(amplitude: f64, kappa: f64) -> Pressure {
    let k2 = 4.0 * PI;
    let scale = move |t: f64| amplitude * amplitude * 0.25 * libm::exp(-16.0 * PI * PI * kappa * t);
    Pressure::Analytic {
        value: Arc::new(move |t, x| taylor_green_at(amplitude, kappa, t, [x[0], x[1]]).1),
        gradient: Arc::new(move |t, x, o| {
            let s = scale(t);
            o[0] = -s * k2 * libm::sin(k2 * x[0]);
            o[1] = -s * k2 * libm::sin(k2 * x[1]);
        }),
        laplacian: Some(Arc::new(move |t, x| {
            -scale(t) * k2 * k2 * (libm::cos(k2 * x[0]) + libm::cos(k2 * x[1]))
        })),
    }
}

/// Sampled bounds on the problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientReport {
    pub samples: usize,
    /// Extreme eigenvalues of `a` over the samples.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `sup ‖a‖` (spectral norm).
    pub a_norm: f64,
    /// `sup ‖2a‖`, the covariance rate of the noise `sqrt(2a) dW`.
    pub noise_norm: f64,
    /// `sup ‖a⁻¹‖`.
    pub a_inv_norm: f64,
    pub b0_sup: f64,
    /// Sampled Lipschitz constant of `b1`.
    pub b1_lipschitz: f64,
    pub u0_sup: f64,
    /// `∫_0^T ‖∇℘_t‖_∞ dt`.
    pub pressure_grad_integral: f64,
    /// `∫_0^T ‖∇℘_t‖_∞² dt`.
    pub pressure_grad_sq_integral: f64,
    /// `∫_0^T sup|V_t| dt` and `∫_0^T sup|V_t|² dt`.
    pub forcing_integral: f64,
    pub forcing_sq_integral: f64,
    pub violations: Vec<String>,
}

/// Radical inverse of `i` in `base` (Halton sequence).
fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const HALTON_BASES: [usize; 10] = [2, 3, 5, 7, 13, 17, 19, 23, 29, 31];

fn sample_point(domain: &DomainDescriptor, i: usize, out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate().take(domain.dim) {
        let u = halton(i + 1, HALTON_BASES[a % HALTON_BASES.len()]);
        *o = domain.lo + u * (domain.hi - domain.lo);
    }
}

/// Samples the coefficient bounds at `samples` low-discrepancy points (times
/// on a 51-point grid for the time integrals) and flags violations.
pub fn validate_coefficients(set: &CoefficientSet, samples: usize) -> Result<CoefficientReport> {
    if samples == 0 {
        return Err(Error::Configuration("validate_coefficients needs samples >= 1".into()));
    }
    let d = set.dim();
    let mut report = CoefficientReport {
        samples,
        lambda_min: f64::INFINITY,
        lambda_max: 0.0,
        a_norm: 0.0,
        noise_norm: 0.0,
        a_inv_norm: 0.0,
        b0_sup: 0.0,
        b1_lipschitz: 0.0,
        u0_sup: 0.0,
        pressure_grad_integral: 0.0,
        pressure_grad_sq_integral: 0.0,
        forcing_integral: 0.0,
        forcing_sq_integral: 0.0,
        violations: Vec::new(),
    };
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut v = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut asym: f64 = 0.0;
    for i in 0..samples {
        sample_point(&set.domain, i, &mut x);
        let t = set.horizon * halton(i + 1, 11);
        set.diffusion_at(t, &x, &mut a);
        asym = asym.max(linalg::asymmetry(&a, d));
        let (eig, _) = linalg::symmetric_eigen(&a, d);
        for &l in &eig {
            report.lambda_min = report.lambda_min.min(l);
            report.lambda_max = report.lambda_max.max(l);
        }
        set.u0_at(&x, &mut v);
        report.u0_sup = report.u0_sup.max(linalg::norm(&v));
        if let Some(b0) = &set.b0 {
            b0(t, &periodic_wrap(&x, &set.domain), &mut v);
            report.b0_sup = report.b0_sup.max(linalg::norm(&v));
        }
        if let Some(b1) = &set.b1 {
            // difference quotient over a short deterministic offset
            for (a, (yy, xx)) in y.iter_mut().zip(&x).enumerate() {
                *yy = xx + 1e-3 * (halton(i + 1, HALTON_BASES[(a + 1) % HALTON_BASES.len()]) - 0.5);
            }
            b1(t, &x, &mut v);
            b1(t, &y, &mut w);
            let dx = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            if dx > 0.0 {
                let db = v.iter().zip(&w).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                report.b1_lipschitz = report.b1_lipschitz.max(libm::sqrt(db / dx));
            }
        }
    }
    report.a_norm = report.lambda_max;
    report.noise_norm = 2.0 * report.lambda_max;
    report.a_inv_norm = if report.lambda_min > 0.0 {
        1.0 / report.lambda_min
    } else {
        f64::INFINITY
    };
    if asym > 1e-12 {
        report
            .violations
            .push(format!("diffusion matrix asymmetric (relative {asym:.3e})"));
    }
    if !(report.lambda_min > 0.0) {
        report
            .violations
            .push(format!("diffusion not positive definite (λ_min = {})", report.lambda_min));
    }
    if set.has_forcing() {
        let steps = 50;
        let per_time = samples.div_ceil(steps + 1).max(1);
        let mut grad_sup = vec![0.0f64; steps + 1];
        let mut v_sup = vec![0.0f64; steps + 1];
        for (m, (g, vs)) in grad_sup.iter_mut().zip(v_sup.iter_mut()).enumerate() {
            let t = set.horizon * m as f64 / steps as f64;
            for i in 0..per_time {
                sample_point(&set.domain, i, &mut x);
                *g = g.max(linalg::norm(&set.pressure_gradient(t, &x)?));
                set.forcing_v(t, &x, &mut v)?;
                *vs = vs.max(linalg::norm(&v));
            }
        }
        let dt = set.horizon / steps as f64;
        let trap = |f: &dyn Fn(usize) -> f64| {
            (0..steps).map(|m| 0.5 * dt * (f(m) + f(m + 1))).sum::<f64>()
        };
        report.pressure_grad_integral = trap(&|m| grad_sup[m]);
        report.pressure_grad_sq_integral = trap(&|m| grad_sup[m] * grad_sup[m]);
        report.forcing_integral = trap(&|m| v_sup[m]);
        report.forcing_sq_integral = trap(&|m| v_sup[m] * v_sup[m]);
    }
    let finite = [
        report.u0_sup,
        report.b0_sup,
        report.b1_lipschitz,
        report.pressure_grad_sq_integral,
        report.forcing_sq_integral,
    ];
    if finite.iter().any(|v| !v.is_finite()) {
        report.violations.push("non-finite coefficient bound".into());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Grid;

    fn square(m: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d * d];
        linalg::matmul(m, m, d, &mut out);
        out
    }

    #[test]
    fn sqrt_2a_examples() {
        let r = sqrt_2a(&[0.1, 0.0, 0.0, 0.1], 2).unwrap();
        let s = libm::sqrt(0.2);
        for (x, y) in r.iter().zip(&[s, 0.0, 0.0, s]) {
            assert!((x - y).abs() < 1e-15);
        }
        let r = sqrt_2a(&[0.5, 0.0, 0.0, 2.0], 2).unwrap();
        for (x, y) in r.iter().zip(&[1.0, 0.0, 0.0, 2.0]) {
            assert!((x - y).abs() < 1e-14);
        }
        let r = sqrt_2a(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        let sq = square(&r, 2);
        for (x, y) in sq.iter().zip(&[4.0, 2.0, 2.0, 4.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((r[1] - r[2]).abs() < 1e-15);
    }

    #[test]
    fn sqrt_2a_rejects_bad_input() {
        assert!(matches!(sqrt_2a(&[1.0, 0.5, 0.0, 1.0], 2), Err(Error::Coefficient(_))));
        assert!(matches!(sqrt_2a(&[1.0, 0.0, 0.0, -1.0], 2), Err(Error::Coefficient(_))));
        assert!(matches!(sqrt_2a(&[1.0, 2.0, 2.0, 1.0], 2), Err(Error::Coefficient(_))));
    }

    #[test]
    fn pressure_gradient_examples() {
        let zero = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::torus(1), 1.0, 0.1)
            .unwrap();
        assert_eq!(zero.pressure_gradient(0.3, &[0.2]).unwrap(), vec![0.0]);

        let mut set = zero.clone();
        set.pressure = Pressure::Analytic {
            value: Arc::new(|_, x| libm::cos(4.0 * PI * x[0])),
            gradient: Arc::new(|_, x, o| o[0] = -4.0 * PI * libm::sin(4.0 * PI * x[0])),
            laplacian: None,
        };
        for &x in &[0.0, 0.1, 0.37, 0.9] {
            let g = set.pressure_gradient(0.0, &[x]).unwrap()[0];
            assert!((g + 4.0 * PI * libm::sin(4.0 * PI * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_pressure_gradient_matches_closed_form_to_second_order() {
        let (a, kappa) = (0.5, 0.1);
        let analytic = ScenarioPreset::TaylorGreen2D {
            amplitude: a,
            pressure: true,
        }
        .build(DomainDescriptor::torus(2), 0.25, kappa)
        .unwrap();
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let grid = Grid::new(DomainDescriptor::torus(2), n).unwrap();
            let field = SpaceTimeField::from_fn(grid, 0.25, 5, 1, |t, x, o| {
                o[0] = analytic.pressure_value(t, x).unwrap()
            })
            .unwrap();
            let mut gridded = analytic.clone();
            gridded.pressure = Pressure::Grid(field);
            let mut worst: f64 = 0.0;
            for node in 0..grid.nodes() {
                let x = grid.node_coords(node);
                let ga = analytic.pressure_gradient(0.1, &x).unwrap();
                let gg = gridded.pressure_gradient(0.1, &x).unwrap();
                worst = worst.max((ga[0] - gg[0]).abs()).max((ga[1] - gg[1]).abs());
            }
            errs.push(worst);
        }
        // centered differences plus linear time interpolation: O(h²) in space
        let order = libm::log(errs[0] / errs[1]) / libm::log(2.0);
        assert!(order > 1.8, "order {order}, errors {errs:?}");
    }

    #[test]
    fn torus_coefficients_are_shift_invariant() {
        let set = ScenarioPreset::TaylorGreen2D {
            amplitude: 0.5,
            pressure: true,
        }
        .build(DomainDescriptor::torus(2), 0.25, 0.1)
        .unwrap();
        // dyadic points so that x + k is exact
        for i in 0..50u64 {
            let x = [(i * 37 % 1024) as f64 / 1024.0, (i * 91 % 1024) as f64 / 1024.0];
            let k = [(i % 7) as f64 - 3.0, (i % 5) as f64 - 2.0];
            let xk = [x[0] + k[0], x[1] + k[1]];
            let (mut u, mut v) = ([0.0; 2], [0.0; 2]);
            set.u0_at(&x, &mut u);
            set.u0_at(&xk, &mut v);
            assert_eq!(u, v);
            assert_eq!(
                set.pressure_gradient(0.1, &x).unwrap(),
                set.pressure_gradient(0.1, &xk).unwrap()
            );
        }
    }

    #[test]
    fn report_examples() {
        let kappa = 0.1;
        let zero = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::torus(2), 1.0, kappa)
            .unwrap();
        let r = validate_coefficients(&zero, 100).unwrap();
        assert!((r.noise_norm - 2.0 * kappa).abs() < 1e-15);
        assert!((r.a_norm - kappa).abs() < 1e-15);
        assert!((r.a_inv_norm - 1.0 / kappa).abs() < 1e-12);
        assert_eq!(
            (r.u0_sup, r.b0_sup, r.b1_lipschitz, r.pressure_grad_sq_integral),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert!(r.violations.is_empty());

        let c = ScenarioPreset::ConstantU0(vec![0.3, -0.4])
            .build(DomainDescriptor::torus(2), 1.0, kappa)
            .unwrap();
        assert!((validate_coefficients(&c, 10).unwrap().u0_sup - 0.5).abs() < 1e-15);

        let tg = ScenarioPreset::TaylorGreen2D {
            amplitude: 1.0,
            pressure: true,
        }
        .build(DomainDescriptor::torus(2), 0.25, kappa)
        .unwrap();
        let r = validate_coefficients(&tg, 10_000).unwrap();
        assert!(r.u0_sup <= 1.0 + 1e-12 && r.u0_sup >= 0.98, "{}", r.u0_sup);
        assert!(r.pressure_grad_sq_integral > 0.0 && r.pressure_grad_integral > 0.0);
    }

    #[test]
    fn lipschitz_estimate_of_linear_drift() {
        let mut set = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::free_space(1, -1.0, 1.0), 1.0, 0.1)
            .unwrap();
        set.b1 = Some(Arc::new(|_, x, o| o[0] = -3.0 * x[0]));
        let r = validate_coefficients(&set, 64).unwrap();
        assert!((r.b1_lipschitz - 3.0).abs() < 1e-9);
    }

    #[test]
    fn presets_check_dimensions() {
        assert!(matches!(
            ScenarioPreset::Burgers1D { amplitude: 0.5 }.build(DomainDescriptor::torus(2), 1.0, 0.1),
            Err(Error::Scenario(_))
        ));
        assert!(ScenarioPreset::TaylorGreen2D {
            amplitude: 0.5,
            pressure: true
        }
        .build(DomainDescriptor::free_space(2, 0.0, 1.0), 1.0, 0.1)
        .is_err());
    }
}
