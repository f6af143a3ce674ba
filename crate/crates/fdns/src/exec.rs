use fdns_core::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Runs tasks on a private rayon pool of fixed size.
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    /// `threads = 0` lets rayon pick the number of CPUs.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Self {
            pool: ThreadPoolBuilder::new().num_threads(threads).build()?,
        })
    }
}

impl Executor for RayonExecutor {
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..tasks).into_par_iter().map(f).collect())
    }

    fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fdns_core::exec::mc_mean;
    use fdns_core::Sequential;

    #[test]
    fn task_order_is_preserved() {
        let ex = RayonExecutor::new(4).unwrap();
        assert_eq!(ex.threads(), 4);
        let v = ex.map(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }

    #[test]
    fn reductions_match_sequential_bitwise() {
        let sample = |p: usize, out: &mut [f64]| {
            out[0] = ((p as f64) * 0.37).sin();
            out[1] = (p as f64).sqrt();
            Ok(())
        };
        let a = mc_mean(&Sequential, 10_000, 64, 2, sample).unwrap();
        let b = mc_mean(&RayonExecutor::new(3).unwrap(), 10_000, 64, 2, sample).unwrap();
        assert_eq!(a, b);
    }
}
