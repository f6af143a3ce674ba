//! Centered second-order finite differences. Periodic wrap on the torus;
//! interior-only stencils on free space (boundary nodes are NaN).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Grid, SpaceTimeField};
use crate::error::{Error, Result};

fn check_resolution(grid: &Grid) -> Result<()> {
    if grid.n < 4 {
        return Err(Error::Shape(format!(
            "finite differences need n >= 4 points per axis, got {}",
            grid.n
        )));
    }
    Ok(())
}

/// `∂_i v^j` per node, stored as `d x c` row-major (`i` slow).
pub fn gradient_of(grid: &Grid, data: &[f64], c: usize) -> Result<Vec<f64>> {
    check_resolution(grid)?;
    let d = grid.dim();
    let nodes = grid.nodes();
    if data.len() != nodes * c {
        return Err(Error::Shape(format!(
            "slice has {} values, expected {}",
            data.len(),
            nodes * c
        )));
    }
    let inv2h = 0.5 / grid.h();
    let mut out = vec![0.0; nodes * d * c];
    for node in 0..nodes {
        for i in 0..d {
            let (p, m) = (grid.neighbor(node, i, 1), grid.neighbor(node, i, -1));
            for j in 0..c {
                out[(node * d + i) * c + j] = match (p, m) {
                    (Some(p), Some(m)) => (data[p * c + j] - data[m * c + j]) * inv2h,
                    _ => f64::NAN,
                };
            }
        }
    }
    Ok(out)
}

/// `∇·v` per node for a `d`-component field.
pub fn divergence_of(grid: &Grid, data: &[f64], c: usize) -> Result<Vec<f64>> {
    if c != grid.dim() {
        return Err(Error::Shape(format!(
            "divergence needs a {}-component vector field, got {c} components",
            grid.dim()
        )));
    }
    let grad = gradient_of(grid, data, c)?;
    let d = c;
    Ok((0..grid.nodes())
        .map(|node| (0..d).map(|i| grad[(node * d + i) * d + i]).sum())
        .collect())
}

/// Componentwise `Δv` per node.
pub fn laplacian_of(grid: &Grid, data: &[f64], c: usize) -> Result<Vec<f64>> {
    check_resolution(grid)?;
    let d = grid.dim();
    let nodes = grid.nodes();
    if data.len() != nodes * c {
        return Err(Error::Shape("slice length does not match grid".into()));
    }
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; nodes * c];
    for node in 0..nodes {
        for j in 0..c {
            let centre = data[node * c + j];
            let mut acc = 0.0;
            let mut interior = true;
            for i in 0..d {
                match (grid.neighbor(node, i, 1), grid.neighbor(node, i, -1)) {
                    (Some(p), Some(m)) => acc += data[p * c + j] - 2.0 * centre + data[m * c + j],
                    _ => interior = false,
                }
            }
            out[node * c + j] = if interior { acc * inv_h2 } else { f64::NAN };
        }
    }
    Ok(out)
}

/// Gradient of a field at time index `m`.
pub fn gradient(field: &SpaceTimeField, m: usize) -> Result<Vec<f64>> {
    gradient_of(&field.grid, field.slice(m), field.components)
}

/// Divergence of a vector field at time index `m`.
pub fn divergence(field: &SpaceTimeField, m: usize) -> Result<Vec<f64>> {
    divergence_of(&field.grid, field.slice(m), field.components)
}

/// Laplacian of a field at time index `m`.
pub fn laplacian(field: &SpaceTimeField, m: usize) -> Result<Vec<f64>> {
    laplacian_of(&field.grid, field.slice(m), field.components)
}
