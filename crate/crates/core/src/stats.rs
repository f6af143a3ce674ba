//! Running moments and Monte Carlo estimates.

use alloc::vec;
use alloc::vec::Vec;

/// Monte Carlo estimate of a scalar or vector mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MCEstimate {
    pub value: Vec<f64>,
    /// Standard error of `value`, componentwise.
    pub std_error: Vec<f64>,
    pub n_samples: usize,
}

impl MCEstimate {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }

    pub fn scalar_se(&self) -> f64 {
        self.std_error[0]
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    /// Largest componentwise standard error.
    pub fn max_se(&self) -> f64 {
        self.std_error.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// Scales value and standard error by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            value: self.value.iter().map(|v| v * c).collect(),
            std_error: self.std_error.iter().map(|s| s * c.abs()).collect(),
            n_samples: self.n_samples,
        }
    }
}

/// Welford accumulator over vectors of fixed length.
///
/// Identical samples leave the variance exactly zero and the mean exactly
/// equal to the sample, which the trivial fixed-point checks rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        self.count += 1;
        if self.count == 1 {
            self.mean.copy_from_slice(sample);
            return;
        }
        let n = self.count as f64;
        for ((m, q), &y) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = y - *m;
            if delta != 0.0 {
                *m += delta / n;
                *q += delta * (y - *m);
            }
        }
    }

    /// Chan et al. pairwise merge. Merging in a fixed order keeps results
    /// independent of how the samples were partitioned across workers.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            if delta != 0.0 {
                self.mean[i] += delta * (nb / n);
                self.m2[i] += other.m2[i] + delta * delta * (na * nb / n);
            } else {
                self.m2[i] += other.m2[i];
            }
        }
        self.count += other.count;
    }

    /// Unbiased sample variance per component (zero for fewer than two samples).
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|q| (q / denom).max(0.0)).collect()
    }

    pub fn estimate(&self) -> MCEstimate {
        let n = self.count.max(1) as f64;
        MCEstimate {
            value: self.mean.clone(),
            std_error: self
                .variance()
                .into_iter()
                .map(|v| libm::sqrt(v / n))
                .collect(),
            n_samples: self.count,
        }
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_exact_mean_and_zero_error() {
        let mut a = Moments::new(2);
        for _ in 0..1000 {
            a.push(&[0.3, -0.2]);
        }
        let mut b = Moments::new(2);
        for _ in 0..77 {
            b.push(&[0.3, -0.2]);
        }
        a.merge(&b);
        let e = a.estimate();
        assert_eq!(e.value, vec![0.3, -0.2]);
        assert_eq!(e.std_error, vec![0.0, 0.0]);
        assert_eq!(e.n_samples, 1077);
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..101).map(|i| libm::sin(i as f64 * 0.37)).collect();
        let mut whole = Moments::new(1);
        xs.iter().for_each(|x| whole.push(&[*x]));
        let mut left = Moments::new(1);
        let mut right = Moments::new(1);
        xs[..40].iter().for_each(|x| left.push(&[*x]));
        xs[40..].iter().for_each(|x| right.push(&[*x]));
        left.merge(&right);
        assert!((left.mean()[0] - whole.mean()[0]).abs() < 1e-14);
        assert!((left.variance()[0] - whole.variance()[0]).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 2.0).collect();
        let (s, c) = linear_fit(&x, &y).unwrap();
        assert!((s + 0.5).abs() < 1e-14 && (c - 2.0).abs() < 1e-14);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
