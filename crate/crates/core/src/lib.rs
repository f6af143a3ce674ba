//! Numerical engine for future-distribution-dependent SDEs.
//!
//! The SDE's drift at time `s` is an expectation over the flow restarted at
//! `s` and run to the horizon `T`. Solving it by Picard iteration over Monte
//! Carlo particle flows yields the stochastic representation of (generalized)
//! incompressible Navier-Stokes solutions on the torus and on free space.
//!
//! The crate is `no_std` (with `alloc`): all IO, configuration files and
//! thread pools live in the `fdns` companion crate, which plugs in through
//! [`exec::Executor`].

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod coefficients;
pub mod config;
pub mod error;
pub mod exec;
pub mod feynman_kac;
pub mod fields;
pub mod fixedpoint;
pub mod linalg;
pub mod navier_stokes;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use stats::MCEstimate;
