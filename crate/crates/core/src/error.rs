use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A time or point outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A free-space point outside the evaluation box.
    #[error("extrapolation error: point {point:?} outside box [{lo}, {hi}]")]
    Extrapolation { point: Vec<f64>, lo: f64, hi: f64 },
    /// Mismatched component counts, dimensions or array sizes.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid problem data (non-symmetric or indefinite diffusion, ...).
    #[error("coefficient error: {0}")]
    Coefficient(String),
    /// Invalid configuration value or missing problem data.
    #[error("configuration error: {0}")]
    Configuration(String),
    /// Misaligned time meshes.
    #[error("mesh error: {0}")]
    Mesh(String),
    /// Non-finite state during Euler stepping.
    #[error("simulation error: particle {particle} at step {step}: {detail}")]
    Simulation {
        particle: usize,
        step: usize,
        detail: String,
    },
    /// Missing ensembles when assembling a drift field.
    #[error("coverage error: missing ensembles for (time index, node) {missing:?}")]
    Coverage { missing: Vec<(usize, usize)> },
    /// Scenario preconditions violated (wrong dimension, domain, ...).
    #[error("scenario error: {0}")]
    Scenario(String),
    /// The fixed-point state is not converged and the caller did not force.
    #[error("refusing to use a non-converged fixed point ({0}); pass force to override")]
    NotConverged(String),
    /// A division by a vanishing time gap.
    #[error("degenerate time gap: s - t = {0}")]
    DegenerateGap(f64),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
