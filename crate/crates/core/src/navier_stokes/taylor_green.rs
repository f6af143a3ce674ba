//! Period-1 Taylor-Green vortex.
//!
//! With `k = 2π` and `F(t) = e^{-2κk²t}`:
//!
//! ```text
//! u = A ( sin kx cos ky, -cos kx sin ky ) F
//! ℘ = A²/4 ( cos 2kx + cos 2ky ) F²
//! ```
//!
//! This is the textbook period-2π vortex with viscosity `ν` and amplitude `A'`
//! under `x = 2π x'`, `u = 2π u'`, `ν = 4π² κ`, `℘ = 4π² ℘'`.

use alloc::format;
use core::f64::consts::PI;

use crate::error::{Error, Result};

pub(crate) fn taylor_green_at(amplitude: f64, kappa: f64, t: f64, x: [f64; 2]) -> ([f64; 2], f64) {
    let k = 2.0 * PI;
    let f = libm::exp(-2.0 * kappa * k * k * t);
    let (sx, cx) = libm::sincos(k * x[0]);
    let (sy, cy) = libm::sincos(k * x[1]);
    let u = [amplitude * sx * cy * f, -amplitude * cx * sy * f];
    let p = 0.25 * amplitude * amplitude * (libm::cos(2.0 * k * x[0]) + libm::cos(2.0 * k * x[1])) * f * f;
    (u, p)
}

/// Velocity and pressure of the vortex at `(t, x)`.
pub fn taylor_green_exact(amplitude: f64, kappa: f64, t: f64, x: &[f64]) -> Result<([f64; 2], f64)> {
    if x.len() != 2 {
        return Err(Error::Scenario(format!(
            "the Taylor-Green vortex is two-dimensional, got a point of dimension {}",
            x.len()
        )));
    }
    Ok(taylor_green_at(amplitude, kappa, t, [x[0], x[1]]))
}

/// Largest residual of `∂_t u - κΔu + (u·∇)u + ∇℘` over an `n x n` grid at
/// time `t`, substituting the closed form into fourth-order centered
/// differences in space and a centered difference in time.
pub fn taylor_green_residual(amplitude: f64, kappa: f64, t: f64, n: usize) -> f64 {
    substitution_residual(|t, x| taylor_green_at(amplitude, kappa, t, x), kappa, t, n)
}

fn substitution_residual(field: impl Fn(f64, [f64; 2]) -> ([f64; 2], f64), kappa: f64, t: f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let dt = 1e-5;
    let at = |x: f64, y: f64| field(t, [x, y]);
    // 4th-order first and second derivative weights over offsets -2..=2
    let d1 = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
    let d2 = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (i as f64 * h, j as f64 * h);
            let (u, _) = at(x, y);
            let mut ux = [0.0; 2];
            let mut uy = [0.0; 2];
            let mut lap = [0.0; 2];
            let mut px = 0.0;
            let mut py = 0.0;
            for (o, (w1, w2)) in d1.iter().zip(&d2).enumerate() {
                let off = (o as f64 - 2.0) * h;
                let (vx, qx) = at(x + off, y);
                let (vy, qy) = at(x, y + off);
                for c in 0..2 {
                    ux[c] += w1 * vx[c] / h;
                    uy[c] += w1 * vy[c] / h;
                    lap[c] += w2 * (vx[c] + vy[c]) / (h * h);
                }
                px += w1 * qx / h;
                py += w1 * qy / h;
            }
            let later = field(t + dt, [x, y]).0;
            let earlier = field((t - dt).max(0.0), [x, y]).0;
            let span = t + dt - (t - dt).max(0.0);
            let grad_p = [px, py];
            for c in 0..2 {
                let dudt = (later[c] - earlier[c]) / span;
                let r = dudt - kappa * lap[c] + u[0] * ux[c] + u[1] * uy[c] + grad_p[c];
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}
