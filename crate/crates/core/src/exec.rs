//! Task execution strategy.
//!
//! Every Monte Carlo loop in the crate is expressed as a fixed set of
//! independent tasks whose results are reduced in task order. An executor only
//! decides *where* tasks run, so results never depend on it.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Runs `f(0..tasks)` and returns the results in task order.
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;

    /// Worker count, informational only.
    fn threads(&self) -> usize {
        1
    }
}

/// Runs tasks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..tasks).map(f).collect()
    }
}

impl<E: Executor> Executor for &E {
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (**self).map(tasks, f)
    }

    fn threads(&self) -> usize {
        (**self).threads()
    }
}

use crate::error::Result;
use crate::stats::{MCEstimate, Moments};

/// Monte Carlo mean of `sample(p, out)` over `p in 0..n`.
///
/// Particles are split into fixed blocks of `block`; each block accumulates
/// sequentially and blocks are merged in index order, so the result is
/// bitwise independent of the executor.
pub fn mc_mean<E, F>(exec: &E, n: usize, block: usize, dim: usize, sample: F) -> Result<MCEstimate>
where
    E: Executor,
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    let blocks = n.div_ceil(block.max(1));
    let parts = exec.map(blocks, |b| -> Result<Moments> {
        let mut acc = Moments::new(dim);
        let mut buf = alloc::vec![0.0; dim];
        for p in (b * block)..((b + 1) * block).min(n) {
            sample(p, &mut buf)?;
            acc.push(&buf);
        }
        Ok(acc)
    });
    let mut total = Moments::new(dim);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total.estimate())
}
