//! Small dense matrices (row-major `d x d` slices) for `d <= 3` hot paths.

use alloc::vec;
use alloc::vec::Vec;

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

pub fn matmul(a: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = s;
        }
    }
}

pub fn matvec(a: &[f64], v: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        let mut s = 0.0;
        for k in 0..d {
            s += a[i * d + k] * v[k];
        }
        out[i] = s;
    }
}

pub fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut t = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            t[j * d + i] = a[i * d + j];
        }
    }
    t
}

pub fn frobenius(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|x| x * x).sum())
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative asymmetry `max |a_ij - a_ji| / max|a|`.
pub fn asymmetry(a: &[f64], d: usize) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((a[i * d + j] - a[j * d + i]).abs());
        }
    }
    worst / scale
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues and the eigenvector matrix `V` (columns are
/// eigenvectors, row-major storage) with `A = V diag(w) V^T`.
pub fn symmetric_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = identity(d);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += m[i * d + j] * m[i * d + j];
            }
        }
        if off < 1e-300 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w = (0..d).map(|i| m[i * d + i]).collect();
    (w, v)
}

/// Rebuilds `V diag(g(w)) V^T`.
pub fn spectral_map(w: &[f64], v: &[f64], d: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for k in 0..d {
        let gk = g(w[k]);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += v[i * d + k] * gk * v[j * d + k];
            }
        }
    }
    out
}

/// Spectral (operator 2-) norm.
pub fn operator_norm(a: &[f64], d: usize) -> f64 {
    if d == 1 {
        return a[0].abs();
    }
    let at = transpose(a, d);
    let mut ata = vec![0.0; d * d];
    matmul(&at, a, d, &mut ata);
    let (w, _) = symmetric_eigen(&ata, d);
    libm::sqrt(w.iter().fold(0.0f64, |m, &x| m.max(x)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_reconstructs() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0];
        let (w, v) = symmetric_eigen(&a, 3);
        let r = spectral_map(&w, &v, 3, |x| x);
        for (x, y) in a.iter().zip(&r) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn operator_norm_of_rotation_scaled() {
        let a = [0.0, -2.0, 2.0, 0.0];
        assert!((operator_norm(&a, 2) - 2.0).abs() < 1e-14);
    }
}
