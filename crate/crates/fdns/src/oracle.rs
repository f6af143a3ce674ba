//! Deterministic reference solutions on the period-1 torus, computed
//! spectrally and independently of any Monte Carlo machinery.

use std::sync::Arc;

use fdns_core::coefficients::{CoefficientSet, Diffusion};
use fdns_core::config::GridConfig;
use fdns_core::fields::{DomainDescriptor, DomainKind, Grid, SpaceTimeField};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("initial datum has mean {mean:e}; the Cole-Hopf antiderivative is periodic only for mean-zero data (subtract the mean or use the mild oracle)")]
    NonZeroMean { mean: f64 },
    #[error("mild iteration did not converge: sup change {change:e} after {iterations} iterations (reduce T)")]
    NotConverged { iterations: usize, change: f64 },
    #[error("unsupported problem: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Core(#[from] fdns_core::Error),
}

/// FFTs on an `n^d` periodic grid (`d <= 2`, axis 0 slowest).
struct Spectral {
    n: usize,
    d: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    fn new(n: usize, d: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            d,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        fft.process(data);
        if self.d == 2 {
            let n = self.n;
            let mut col = vec![Complex64::default(); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                fft.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
        }
    }

    fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
    }

    fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    /// Angular wavenumber of index `j`; the Nyquist mode maps to 0 when
    /// `zero_nyquist` is set (odd derivatives).
    fn wavenumber(&self, j: usize, zero_nyquist: bool) -> f64 {
        let n = self.n;
        if zero_nyquist && 2 * j == n {
            return 0.0;
        }
        let k = if 2 * j <= n { j as f64 } else { j as f64 - n as f64 };
        2.0 * std::f64::consts::PI * k
    }

    /// Per flat index the wavenumber along `axis`.
    fn axis_wavenumbers(&self, axis: usize, zero_nyquist: bool) -> Vec<f64> {
        let n = self.n;
        (0..self.len())
            .map(|i| {
                let j = if self.d == 1 || axis == 1 { i % n } else { i / n };
                self.wavenumber(j, zero_nyquist)
            })
            .collect()
    }

    /// `|k|²` per flat index.
    fn k2(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for axis in 0..self.d {
            for (o, k) in out.iter_mut().zip(self.axis_wavenumbers(axis, false)) {
                *o += k * k;
            }
        }
        out
    }

    /// Flat coordinates of the nodes `i/n`.
    fn coords(&self) -> Vec<[f64; 2]> {
        let n = self.n;
        let h = 1.0 / n as f64;
        (0..self.len())
            .map(|i| match self.d {
                1 => [i as f64 * h, 0.0],
                _ => [(i / n) as f64 * h, (i % n) as f64 * h],
            })
            .collect()
    }

    /// Fine-grid flat index of coarse node `i` when the fine grid has
    /// `factor` points per coarse spacing.
    fn fine_index(&self, coarse: &Grid, i: usize, factor: usize) -> usize {
        let idx = coarse.multi_index(i);
        (0..self.d).fold(0, |acc, a| acc * self.n + idx[a] * factor)
    }
}

fn check_torus(domain: &DomainDescriptor, max_dim: usize) -> Result<(), OracleError> {
    if domain.kind != DomainKind::Torus || domain.dim == 0 || domain.dim > max_dim {
        return Err(OracleError::Unsupported(format!(
            "needs the torus in dimension <= {max_dim}, got {:?} of dimension {}",
            domain.kind, domain.dim
        )));
    }
    Ok(())
}

/// Viscous Burgers on the 1-d torus by the Cole-Hopf transform: the heat
/// equation for `φ0 = exp(-U/(2κ))`, `U' = u0`, is solved exactly in Fourier
/// space on `resolution · n` points and `u = -2κ φ_x / φ` is sampled back on
/// the `n`-point grid at `steps + 1` uniform times.
pub fn cole_hopf_oracle(
    u0: impl Fn(f64) -> f64,
    kappa: f64,
    horizon: f64,
    steps: usize,
    n: usize,
    resolution: usize,
) -> Result<SpaceTimeField, OracleError> {
    if resolution < 4 {
        return Err(OracleError::Unsupported(format!(
            "spectral resolution must be at least 4 points per grid point, got {resolution}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(OracleError::Unsupported(format!("kappa must be > 0, got {kappa}")));
    }
    let grid = Grid::new(DomainDescriptor::torus(1), n)?;
    let mut out = SpaceTimeField::zeros(grid, horizon, steps, 1)?;
    let sp = Spectral::new(n * resolution, 1);
    let nf = sp.n;
    let coords = sp.coords();
    let mut u: Vec<Complex64> = coords.iter().map(|x| Complex64::new(u0(x[0]), 0.0)).collect();
    let scale = u.iter().fold(1.0f64, |m, v| m.max(v.re.abs()));
    sp.forward(&mut u);
    let mean = u[0].re / nf as f64;
    if mean.abs() > 1e-10 * scale {
        return Err(OracleError::NonZeroMean { mean });
    }
    let k = sp.axis_wavenumbers(0, true);
    let mut big_u: Vec<Complex64> = u
        .iter()
        .zip(&k)
        .map(|(v, &k)| if k == 0.0 { Complex64::default() } else { v / Complex64::new(0.0, k) })
        .collect();
    sp.inverse(&mut big_u);
    let lo = big_u.iter().fold(f64::INFINITY, |m, v| m.min(v.re));
    let mut phi0: Vec<Complex64> = big_u
        .iter()
        .map(|v| Complex64::new((-(v.re - lo) / (2.0 * kappa)).exp(), 0.0))
        .collect();
    sp.forward(&mut phi0);
    let k2 = sp.k2();
    for (m, &t) in out.times.clone().iter().enumerate() {
        let mut phi: Vec<Complex64> = phi0.iter().zip(&k2).map(|(p, &q)| p * (-kappa * q * t).exp()).collect();
        let mut dphi: Vec<Complex64> = phi.iter().zip(&k).map(|(p, &k)| p * Complex64::new(0.0, k)).collect();
        sp.inverse(&mut phi);
        sp.inverse(&mut dphi);
        for (i, v) in out.slice_mut(m).iter_mut().enumerate() {
            let j = i * resolution;
            *v = -2.0 * kappa * dphi[j].re / phi[j].re;
        }
    }
    Ok(out)
}

/// Controls of [`mild_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MildOptions {
    /// Spectral points per field grid point along each axis.
    pub resolution: usize,
    /// Quadrature steps per field time interval.
    pub refine: usize,
    /// Sup change of the iterates at which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MildOptions {
    fn default() -> Self {
        Self {
            resolution: 4,
            refine: 4,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Fixed-point iteration of the mild form
/// `u_t = e^{κΔt} u0 + ∫_0^t e^{κΔ(t-r)} [V_r - (u_r·∇) u_r] dr`
/// with the exact heat multiplier, pseudo-spectral products (2/3-rule
/// dealiasing) and trapezoidal quadrature. Returns `u` on the field grid at
/// the `M + 1` uniform times, together with the number of iterations.
pub fn mild_oracle(
    set: &CoefficientSet,
    grid_cfg: &GridConfig,
    opts: &MildOptions,
) -> Result<(SpaceTimeField, usize), OracleError> {
    check_torus(&set.domain, 2)?;
    if !matches!(set.diffusion, Diffusion::Isotropic) || set.has_drift() {
        return Err(OracleError::Unsupported(
            "mild oracle needs a = κI and no drift b".into(),
        ));
    }
    if opts.resolution == 0 || opts.refine == 0 {
        return Err(OracleError::Unsupported("resolution and refine must be >= 1".into()));
    }
    let d = set.dim();
    let grid = Grid::new(set.domain, grid_cfg.n)?;
    let mut out = SpaceTimeField::zeros(grid, set.horizon, grid_cfg.time_steps, d)?;
    let sp = Spectral::new(grid_cfg.n * opts.resolution, d);
    let len = sp.len();
    let steps = grid_cfg.time_steps * opts.refine;
    let dt = set.horizon / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|j| set.horizon * j as f64 / steps as f64).collect();
    let coords = sp.coords();
    let kappa = set.kappa;
    let k2 = sp.k2();
    let ks: Vec<Vec<f64>> = (0..d).map(|a| sp.axis_wavenumbers(a, true)).collect();
    let cutoff = 2.0 * std::f64::consts::PI * sp.n as f64 / 3.0;
    let keep: Vec<bool> = (0..len)
        .map(|i| (0..d).all(|a| sp.axis_wavenumbers(a, false)[i].abs() < cutoff))
        .collect();
    let step_factor: Vec<f64> = k2.iter().map(|&q| (-kappa * q * dt).exp()).collect();

    // ĥ_c per component; V per (time, component, node)
    let mut u0_hat = vec![vec![Complex64::default(); len]; d];
    let mut buf = [0.0; 2];
    for (i, x) in coords.iter().enumerate() {
        set.u0_at(&x[..d], &mut buf[..d]);
        for c in 0..d {
            u0_hat[c][i] = Complex64::new(buf[c], 0.0);
        }
    }
    u0_hat.iter_mut().for_each(|h| sp.forward(h));
    let forcing: Option<Vec<Vec<Vec<f64>>>> = if set.has_forcing() {
        let mut all = Vec::with_capacity(steps + 1);
        for &t in &times {
            let mut per = vec![vec![0.0; len]; d];
            for (i, x) in coords.iter().enumerate() {
                set.forcing_v(t, &x[..d], &mut buf[..d])?;
                for c in 0..d {
                    per[c][i] = buf[c];
                }
            }
            all.push(per);
        }
        Some(all)
    } else {
        None
    };

    let heat = |j: usize, c: usize| -> Vec<Complex64> {
        let t = times[j];
        u0_hat[c].iter().zip(&k2).map(|(h, &q)| h * (-kappa * q * t).exp()).collect()
    };
    let mut hat: Vec<Vec<Vec<Complex64>>> = (0..=steps).map(|j| (0..d).map(|c| heat(j, c)).collect()).collect();
    let physical = |h: &[Complex64]| -> Vec<f64> {
        let mut v = h.to_vec();
        sp.inverse(&mut v);
        v.iter().map(|z| z.re).collect()
    };
    let mut phys: Vec<Vec<Vec<f64>>> = hat.iter().map(|hs| hs.iter().map(|h| physical(h)).collect()).collect();

    let nonlinear = |j: usize, u: &[Vec<f64>], uh: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
        let mut result = Vec::with_capacity(d);
        for c in 0..d {
            let mut acc: Vec<f64> = match &forcing {
                Some(f) => f[j][c].clone(),
                None => vec![0.0; len],
            };
            for a in 0..d {
                let mut du: Vec<Complex64> = uh[c].iter().zip(&ks[a]).map(|(h, &k)| h * Complex64::new(0.0, k)).collect();
                sp.inverse(&mut du);
                for i in 0..len {
                    acc[i] -= u[a][i] * du[i].re;
                }
            }
            let mut nh: Vec<Complex64> = acc.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
            sp.forward(&mut nh);
            for (v, &k) in nh.iter_mut().zip(&keep) {
                if !k {
                    *v = Complex64::default();
                }
            }
            result.push(nh);
        }
        result
    };

    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let nl: Vec<Vec<Vec<Complex64>>> = (0..=steps).map(|j| nonlinear(j, &phys[j], &hat[j])).collect();
        let mut integral = vec![vec![Complex64::default(); len]; d];
        change = 0.0;
        for j in 0..=steps {
            if j > 0 {
                for c in 0..d {
                    for i in 0..len {
                        integral[c][i] = step_factor[i] * (integral[c][i] + 0.5 * dt * nl[j - 1][c][i])
                            + 0.5 * dt * nl[j][c][i];
                    }
                }
            }
            for c in 0..d {
                let next: Vec<Complex64> = heat(j, c).iter().zip(&integral[c]).map(|(a, b)| a + b).collect();
                let p = physical(&next);
                for (a, b) in p.iter().zip(&phys[j][c]) {
                    change = change.max((a - b).abs());
                }
                phys[j][c] = p;
                hat[j][c] = next;
            }
        }
        if change <= opts.tol {
            break;
        }
    }
    if !(change <= opts.tol) {
        return Err(OracleError::NotConverged { iterations, change });
    }
    for m in 0..=grid_cfg.time_steps {
        let j = m * opts.refine;
        for i in 0..grid.nodes() {
            let fi = sp.fine_index(&grid, i, opts.resolution);
            for c in 0..d {
                out.value_mut(m, i)[c] = phys[j][c][fi];
            }
        }
    }
    Ok((out, iterations))
}
