use alloc::vec::Vec;

use super::{calculus, SpaceTimeField};
use crate::error::Result;

/// Sup-norms of a field, its gradient and (vector fields) its divergence.
///
/// Per-node magnitudes are Euclidean for values and Frobenius for gradients;
/// sups are maxima over grid nodes, NaN boundary entries skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldNormReport {
    pub sup_norm: f64,
    pub grad_sup_norm: f64,
    pub divergence_sup_norm: f64,
    pub sup_profile: Vec<f64>,
    pub grad_profile: Vec<f64>,
    pub divergence_profile: Vec<f64>,
}

fn nan_max(it: impl Iterator<Item = f64>) -> f64 {
    it.filter(|v| v.is_finite()).fold(0.0, f64::max)
}

pub fn sup_norm_report(field: &SpaceTimeField) -> Result<FieldNormReport> {
    let c = field.components;
    let d = field.grid.dim();
    let nodes = field.nodes();
    let mut sup_profile = Vec::with_capacity(field.times.len());
    let mut grad_profile = Vec::with_capacity(field.times.len());
    let mut divergence_profile = Vec::with_capacity(field.times.len());
    for m in 0..field.times.len() {
        let slice = field.slice(m);
        sup_profile.push(nan_max(
            slice.chunks(c).map(|v| libm::sqrt(v.iter().map(|x| x * x).sum())),
        ));
        let grad = calculus::gradient(field, m)?;
        grad_profile.push(nan_max(
            grad.chunks(d * c).map(|g| libm::sqrt(g.iter().map(|x| x * x).sum())),
        ));
        divergence_profile.push(if c == d {
            nan_max(calculus::divergence(field, m)?.into_iter().map(f64::abs))
        } else {
            0.0
        });
        debug_assert_eq!(slice.len(), nodes * c);
    }
    Ok(FieldNormReport {
        sup_norm: nan_max(sup_profile.iter().copied()),
        grad_sup_norm: nan_max(grad_profile.iter().copied()),
        divergence_sup_norm: nan_max(divergence_profile.iter().copied()),
        sup_profile,
        grad_profile,
        divergence_profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{DomainDescriptor, Grid};
    use core::f64::consts::PI;

    #[test]
    fn zero_and_constant_fields() {
        let g = Grid::new(DomainDescriptor::torus(2), 8).unwrap();
        let z = SpaceTimeField::zeros(g, 1.0, 3, 2).unwrap();
        let r = sup_norm_report(&z).unwrap();
        assert_eq!((r.sup_norm, r.grad_sup_norm, r.divergence_sup_norm), (0.0, 0.0, 0.0));
        assert_eq!(r.sup_profile.len(), 4);
        let c = SpaceTimeField::from_fn(g, 1.0, 3, 2, |_, _, o| {
            o[0] = 3.0;
            o[1] = -4.0;
        })
        .unwrap();
        assert_eq!(sup_norm_report(&c).unwrap().sup_norm, 5.0);
    }

    #[test]
    fn sine_amplitude_recovered() {
        let amp = 1.7;
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = Grid::new(DomainDescriptor::torus(1), n).unwrap();
            // offset so the nodes miss the crest
            let f = SpaceTimeField::from_fn(g, 1.0, 1, 1, |_, x, o| {
                o[0] = amp * libm::sin(2.0 * PI * (x[0] + 0.3 / n as f64))
            })
            .unwrap();
            let err = amp - sup_norm_report(&f).unwrap().sup_norm;
            assert!(err >= 0.0);
            // crest at most h/2 from a node: A(1 - cos(pi h)) <= A (pi h)^2 / 2
            let h = 1.0 / n as f64;
            assert!(err <= amp * (PI * h) * (PI * h) / 2.0);
            errs.push(err);
        }
        assert!(errs[2] < errs[0]);
    }
}
