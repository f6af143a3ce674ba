//! Run parameters shared by the solvers. Parsing lives in the `fdns` crate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Drift/solution grid resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Points per spatial axis.
    pub n: usize,
    /// Number of time intervals `M` (the grid has `M + 1` time nodes).
    pub time_steps: usize,
}

/// Monte Carlo and Euler-Maruyama parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Particles per start point.
    pub particles: usize,
    /// Euler step.
    pub dt: f64,
    /// Largest accepted step; `dt > dt_max` is a configuration error.
    pub dt_max: f64,
    /// Centered-difference step for drift Jacobians.
    pub h_jac: f64,
    /// Finite-difference gradient step is `fd_eps * (1 + |x|)`.
    pub fd_eps: f64,
    /// Particles per task; fixes the reduction order.
    pub block: usize,
    /// Drift and forcing are evaluated on a grid this many times finer per
    /// axis than the field grid.
    pub refine: usize,
}

impl McConfig {
    /// `dt = T/200`, `dt_max = T/50`.
    pub fn for_horizon(horizon: f64, particles: usize) -> Self {
        Self {
            particles,
            dt: horizon / 200.0,
            dt_max: horizon / 50.0,
            h_jac: 1e-4,
            fd_eps: 1e-3,
            block: 256,
            refine: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Configuration(format!(
                "mc.particles must be >= 2, got {}",
                self.particles
            )));
        }
        if !(self.dt > 0.0) || self.dt > self.dt_max * (1.0 + 1e-12) {
            return Err(Error::Configuration(format!(
                "mc.dt = {} must lie in (0, dt_max = {}]",
                self.dt, self.dt_max
            )));
        }
        if self.block == 0 || self.refine == 0 || !(self.h_jac > 0.0) || !(self.fd_eps > 0.0) {
            return Err(Error::Configuration(
                "mc.block, mc.refine, mc.h_jac and mc.fd_eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Picard iteration controls.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation `θ ∈ (0, 1]`; 1 is plain Picard.
    pub damping: f64,
    /// Weights `λ` of the `e^{-λ(T-t)}` gap diagnostics.
    pub lambdas: Vec<f64>,
    /// `Diverged` once a gap exceeds this multiple of the first gap.
    pub divergence_factor: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 30,
            damping: 1.0,
            lambdas: vec![0.0, 1.0, 5.0],
            divergence_factor: 10.0,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Configuration("picard.tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Configuration("picard.max_iter must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Configuration(format!(
                "picard.damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}
