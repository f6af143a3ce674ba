//! Periodic and free-space fields on uniform grids.
//!
//! Layout is row-major over `(time index, node, component)` with the component
//! innermost; nodes are flattened row-major with axis 1 slowest.

mod calculus;
mod norms;

pub use calculus::{divergence, divergence_of, gradient, gradient_of, laplacian, laplacian_of};
pub use norms::{sup_norm_report, FieldNormReport};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    /// `R^d / Z^d`, period exactly 1 per axis.
    Torus,
    /// `R^d`; the box is only used for grid-backed diagnostics.
    FreeSpace,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Torus => "torus",
            DomainKind::FreeSpace => "free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainDescriptor {
    pub kind: DomainKind,
    pub dim: usize,
    /// Lower box corner per axis (0 on the torus).
    pub lo: f64,
    /// Upper box corner per axis (1 on the torus).
    pub hi: f64,
}

impl DomainDescriptor {
    pub fn torus(dim: usize) -> Self {
        Self {
            kind: DomainKind::Torus,
            dim,
            lo: 0.0,
            hi: 1.0,
        }
    }

    pub fn free_space(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            kind: DomainKind::FreeSpace,
            dim,
            lo,
            hi,
        }
    }

    pub fn is_torus(&self) -> bool {
        self.kind == DomainKind::Torus
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Configuration("dimension must be at least 1".into()));
        }
        match self.kind {
            DomainKind::Torus if self.lo != 0.0 || self.hi != 1.0 => Err(Error::Configuration(
                "torus period must be exactly 1 per axis".into(),
            )),
            DomainKind::FreeSpace if !(self.hi > self.lo) => Err(Error::Configuration(format!(
                "free-space box [{}, {}] is empty",
                self.lo, self.hi
            ))),
            _ => Ok(()),
        }
    }

    /// Grid-backed fields are limited to `d <= 3`.
    pub fn validate_grid(&self) -> Result<()> {
        self.validate()?;
        if self.dim > 3 {
            return Err(Error::Shape(format!(
                "grid-backed fields support d <= 3, got d = {}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Wraps one coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - libm::floor(x);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Maps `x` to its representative in `[0,1)^d` on the torus; identity on free space.
pub fn periodic_wrap(x: &[f64], domain: &DomainDescriptor) -> Vec<f64> {
    match domain.kind {
        DomainKind::Torus => x.iter().map(|&v| wrap_unit(v)).collect(),
        DomainKind::FreeSpace => x.to_vec(),
    }
}

/// Uniform spatial grid: `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub domain: DomainDescriptor,
    pub n: usize,
}

impl Grid {
    pub fn new(domain: DomainDescriptor, n: usize) -> Result<Self> {
        domain.validate_grid()?;
        if n < 2 {
            return Err(Error::Configuration(format!("grid needs n >= 2, got {n}")));
        }
        Ok(Self { domain, n })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn nodes(&self) -> usize {
        self.n.pow(self.domain.dim as u32)
    }

    /// Node spacing.
    pub fn h(&self) -> f64 {
        match self.domain.kind {
            DomainKind::Torus => 1.0 / self.n as f64,
            DomainKind::FreeSpace => (self.domain.hi - self.domain.lo) / (self.n - 1) as f64,
        }
    }

    /// Per-axis indices of a flattened node (axis 1 slowest).
    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let d = self.dim();
        let mut idx = [0usize; 3];
        let mut rest = node;
        for axis in (0..d).rev() {
            idx[axis] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .take(self.dim())
            .fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.domain.lo + i as f64 * self.h()
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let idx = self.multi_index(node);
        (0..self.dim()).map(|a| self.coord(idx[a])).collect()
    }

    /// Flat stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim() - 1 - axis) as u32)
    }

    /// Neighbour of `node` shifted by `offset` along `axis`; periodic on the
    /// torus, `None` past the free-space box edge.
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> Option<usize> {
        let idx = self.multi_index(node);
        let n = self.n as isize;
        let i = idx[axis] as isize + offset;
        let j = match self.domain.kind {
            DomainKind::Torus => i.rem_euclid(n),
            DomainKind::FreeSpace => {
                if i < 0 || i >= n {
                    return None;
                }
                i
            }
        };
        let stride = self.stride(axis);
        Some(node - idx[axis] * stride + j as usize * stride)
    }

    /// Multilinear interpolation stencil at `x` (periodic on the torus).
    #[inline]
    pub fn stencil(&self, x: &[f64]) -> Result<Stencil> {
        let d = self.dim();
        let n = self.n;
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0.0f64; 3];
        match self.domain.kind {
            DomainKind::Torus => {
                let nf = n as f64;
                for a in 0..d {
                    let xi = x[a] * nf;
                    let fl = libm::floor(xi);
                    let i = (fl as i64).rem_euclid(n as i64) as usize;
                    base[a] = i;
                    next[a] = if i + 1 == n { 0 } else { i + 1 };
                    frac[a] = xi - fl;
                }
            }
            DomainKind::FreeSpace => {
                let h = self.h();
                for a in 0..d {
                    let xi = (x[a] - self.domain.lo) / h;
                    if !(xi >= 0.0 && xi <= (n - 1) as f64) {
                        return Err(Error::Extrapolation {
                            point: x.to_vec(),
                            lo: self.domain.lo,
                            hi: self.domain.hi,
                        });
                    }
                    let i = (libm::floor(xi) as usize).min(n - 2);
                    base[a] = i;
                    next[a] = i + 1;
                    frac[a] = xi - i as f64;
                }
            }
        }
        let corners = 1usize << d;
        let mut nodes = [0usize; 8];
        let mut weights = [0.0f64; 8];
        for (c, (node, weight)) in nodes.iter_mut().zip(weights.iter_mut()).enumerate().take(corners) {
            let mut flat = 0usize;
            let mut w = 1.0;
            for a in 0..d {
                let hi = (c >> (d - 1 - a)) & 1 == 1;
                flat = flat * n + if hi { next[a] } else { base[a] };
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            *node = flat;
            *weight = w;
        }
        Ok(Stencil {
            corners,
            nodes,
            weights,
        })
    }
}

/// Corner nodes and multilinear weights of one interpolation point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub corners: usize,
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

impl Stencil {
    /// Interpolates a `c`-component slice into `out` (overwritten).
    #[inline]
    pub fn apply(&self, slice: &[f64], c: usize, out: &mut [f64]) {
        out[..c].iter_mut().for_each(|o| *o = 0.0);
        for k in 0..self.corners {
            let w = self.weights[k];
            let base = self.nodes[k] * c;
            for j in 0..c {
                out[j] += w * slice[base + j];
            }
        }
    }
}

/// Field sampled on a uniform time grid times a uniform spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: Grid,
    /// `M + 1` uniformly spaced times from 0 to the horizon.
    pub times: Vec<f64>,
    pub components: usize,
    pub values: Vec<f64>,
}

/// `M + 1` uniform times `m * horizon / M`, with the last one exactly `horizon`.
pub fn uniform_times(horizon: f64, steps: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..=steps)
        .map(|m| horizon * m as f64 / steps as f64)
        .collect();
    t[steps] = horizon;
    t
}

impl SpaceTimeField {
    pub fn zeros(grid: Grid, horizon: f64, steps: usize, components: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::Configuration(format!(
                "time grid needs M >= 1 and T > 0, got M = {steps}, T = {horizon}"
            )));
        }
        if components == 0 {
            return Err(Error::Shape("field needs at least one component".into()));
        }
        let times = uniform_times(horizon, steps);
        Ok(Self {
            values: vec![0.0; (steps + 1) * grid.nodes() * components],
            grid,
            times,
            components,
        })
    }

    /// Samples `f(t, x, out)` at every node.
    pub fn from_fn(
        grid: Grid,
        horizon: f64,
        steps: usize,
        components: usize,
        mut f: impl FnMut(f64, &[f64], &mut [f64]),
    ) -> Result<Self> {
        let mut field = Self::zeros(grid, horizon, steps, components)?;
        let nodes = grid.nodes();
        let coords: Vec<Vec<f64>> = (0..nodes).map(|i| grid.node_coords(i)).collect();
        for m in 0..=steps {
            let t = field.times[m];
            for (node, x) in coords.iter().enumerate() {
                let off = (m * nodes + node) * components;
                f(t, x, &mut field.values[off..off + components]);
            }
        }
        Ok(field)
    }

    pub fn domain(&self) -> &DomainDescriptor {
        &self.grid.domain
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Number of time intervals `M`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.grid.nodes()
    }

    pub fn slice_len(&self) -> usize {
        self.grid.nodes() * self.components
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        let len = self.slice_len();
        &self.values[m * len..(m + 1) * len]
    }

    pub fn slice_mut(&mut self, m: usize) -> &mut [f64] {
        let len = self.slice_len();
        &mut self.values[m * len..(m + 1) * len]
    }

    pub fn value(&self, m: usize, node: usize) -> &[f64] {
        let off = (m * self.nodes() + node) * self.components;
        &self.values[off..off + self.components]
    }

    pub fn value_mut(&mut self, m: usize, node: usize) -> &mut [f64] {
        let c = self.components;
        let off = (m * self.nodes() + node) * c;
        &mut self.values[off..off + c]
    }

    /// Bracketing time index and linear weight of `t`.
    pub fn time_weights(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon) {
            return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
        }
        let steps = self.steps();
        let dt = horizon / steps as f64;
        let mut m = ((t / dt) as usize).min(steps - 1);
        if t < self.times[m] {
            m -= 1;
        } else if m + 1 < steps && t >= self.times[m + 1] {
            m += 1;
        }
        let w = (t - self.times[m]) / (self.times[m + 1] - self.times[m]);
        Ok((m, w))
    }

    /// Multilinear in space, linear in time; exact at grid nodes.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.components];
        self.interpolate_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Allocation-free [`interpolate`](Self::interpolate) for up to 9 components.
    pub fn interpolate_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.grid.dim() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, field is {}-dimensional",
                x.len(),
                self.grid.dim()
            )));
        }
        let (m, w) = self.time_weights(t)?;
        let stencil = self.grid.stencil(x)?;
        let c = self.components;
        stencil.apply(self.slice(m), c, out);
        if w > 0.0 {
            let mut b = [0.0; 9];
            stencil.apply(self.slice(m + 1), c, &mut b);
            for (x, y) in out[..c].iter_mut().zip(&b) {
                *x = (1.0 - w) * *x + w * y;
            }
        }
        Ok(())
    }

    /// Maximum absolute nodal difference to another field on the same grid.
    pub fn max_abs_diff(&self, other: &SpaceTimeField) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::Shape("fields have different shapes".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_examples() {
        let t1 = DomainDescriptor::torus(1);
        assert_eq!(periodic_wrap(&[1.25], &t1), vec![0.25]);
        assert_eq!(periodic_wrap(&[-0.25], &t1), vec![0.75]);
        let t2 = DomainDescriptor::torus(2);
        assert_eq!(periodic_wrap(&[2.0, -1.0], &t2), vec![0.0, 0.0]);
        let f = DomainDescriptor::free_space(1, -1.0, 1.0);
        assert_eq!(periodic_wrap(&[1.25], &f), vec![1.25]);
        assert_eq!(wrap_unit(-1e-20), 0.0);
    }

    #[test]
    fn torus_rejects_other_periods() {
        let mut d = DomainDescriptor::torus(2);
        d.hi = 2.0;
        assert!(d.validate().is_err());
        assert!(Grid::new(DomainDescriptor::torus(4), 8).is_err());
    }

    #[test]
    fn constant_field_interpolates_to_constant() {
        let g = Grid::new(DomainDescriptor::torus(2), 8).unwrap();
        let f = SpaceTimeField::from_fn(g, 1.0, 4, 2, |_, _, o| {
            o[0] = 1.5;
            o[1] = -2.0;
        })
        .unwrap();
        for &(t, x, y) in &[(0.0, 0.1, 0.2), (0.33, -3.7, 9.01), (1.0, 0.999, 0.0)] {
            let v = f.interpolate(t, &[x, y]).unwrap();
            assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] + 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn midpoint_and_nodes() {
        let g = Grid::new(DomainDescriptor::torus(1), 4).unwrap();
        let f = SpaceTimeField::from_fn(g, 1.0, 2, 1, |t, x, o| o[0] = 3.0 * x[0] + t).unwrap();
        // cell [0.25, 0.5]: midpoint average of node values
        let v = f.interpolate(0.0, &[0.375]).unwrap()[0];
        assert!((v - 0.5 * (0.75 + 1.5)).abs() < 1e-15);
        for m in 0..=2 {
            for node in 0..4 {
                let x = g.node_coords(node);
                let v = f.interpolate(f.times[m], &x).unwrap();
                assert_eq!(v[0], f.value(m, node)[0]);
            }
        }
    }

    #[test]
    fn time_outside_horizon_is_domain_error() {
        let g = Grid::new(DomainDescriptor::torus(1), 4).unwrap();
        let f = SpaceTimeField::zeros(g, 1.0, 2, 1).unwrap();
        assert!(matches!(f.interpolate(1.5, &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(f.interpolate(-0.1, &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn free_space_outside_box_is_extrapolation_error() {
        let g = Grid::new(DomainDescriptor::free_space(1, -1.0, 1.0), 5).unwrap();
        let f = SpaceTimeField::zeros(g, 1.0, 2, 1).unwrap();
        assert!(f.interpolate(0.5, &[1.0]).is_ok());
        assert!(matches!(
            f.interpolate(0.5, &[1.01]),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn reproduces_multilinear_functions_on_cells() {
        let g = Grid::new(DomainDescriptor::free_space(2, 0.0, 1.0), 5).unwrap();
        let lin = |x: &[f64]| 1.0 + 2.0 * x[0] - 3.0 * x[1] + 0.5 * x[0] * x[1];
        let f = SpaceTimeField::from_fn(g, 1.0, 1, 1, |_, x, o| o[0] = lin(x)).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.63, 0.97), (0.5, 0.5), (0.999, 0.001)] {
            let v = f.interpolate(0.25, &[x, y]).unwrap()[0];
            assert!((v - lin(&[x, y])).abs() < 1e-13);
        }
    }
}
