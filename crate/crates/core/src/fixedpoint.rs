//! Picard iteration on the drift field.
//!
//! The iterate is the drift `ū_s(x)` of the frozen SDE on (start time node,
//! grid node). One application of the map simulates, for every start time
//! `s_m` and every node `x`, `N` paths of `X_{s_m,·}^x` under the current
//! drift and re-assembles `b_{T-s}(x) - E[u0(X_{s,T}^x) + ∫_s^T V_{T-r}(X_{s,r}^x) dr]`.
//!
//! For a fixed `(m, p)` the noise path is shared by all start nodes, so the
//! kernel propagates every node of the grid together. Inside the kernel the
//! drift and `V` are read from grid slices precomputed at every Euler step
//! (linear in time, multilinear in space) and torus positions are wrapped
//! after every step; both are periodic so the result is unchanged.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::coefficients::CoefficientSet;
use crate::config::{GridConfig, McConfig, PicardConfig};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fields::{divergence_of, gradient_of};
use crate::fields::{DomainKind, Grid, SpaceTimeField};
use crate::rng::{RngContract, StreamKey, StreamTag};
use crate::sde::{ParticleEnsemble, TimeMesh};
use crate::stats::Moments;

/// The expectation functional that turns flow statistics into a drift.
pub trait DriftFunctional: Sync {
    /// Deterministic part at start point `x` and SDE time `s`.
    fn base(&self, set: &CoefficientSet, s: f64, x: &[f64], out: &mut [f64]);

    /// Path quantity whose mean is subtracted from [`base`](Self::base),
    /// given the terminal point and `∫ V` along the path.
    fn terminal(&self, set: &CoefficientSet, end: &[f64], integral: &[f64], out: &mut [f64]);
}

/// `b_{T-s}(x) - E[u0(X_T) + ∫ V]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardFunctional;

impl DriftFunctional for StandardFunctional {
    fn base(&self, set: &CoefficientSet, s: f64, x: &[f64], out: &mut [f64]) {
        set.drift_b(set.horizon - s, x, out);
    }

    fn terminal(&self, set: &CoefficientSet, end: &[f64], integral: &[f64], out: &mut [f64]) {
        set.u0_at(end, out);
        for (o, i) in out.iter_mut().zip(integral) {
            *o += i;
        }
    }
}

/// Node-wise statistics of the path quantity of a [`DriftFunctional`], one
/// time slice per start time `s_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStatistics {
    pub mean: SpaceTimeField,
    pub std_error: SpaceTimeField,
    /// `∂_i` of the per-path quantity by centered differences (`d x d` per node).
    pub gradient: Option<(SpaceTimeField, SpaceTimeField)>,
    /// Divergence of the per-path quantity.
    pub divergence: Option<(SpaceTimeField, SpaceTimeField)>,
    pub particles: usize,
}

impl FlowStatistics {
    pub fn max_se(&self) -> f64 {
        self.std_error.values.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// Multilinear cell: per axis the flat offsets of the lower and upper
/// neighbour and the fractional position.
#[derive(Clone, Copy)]
struct Cell<const D: usize> {
    lo: [usize; D],
    hi: [usize; D],
    frac: [f64; D],
}

impl<const D: usize> Cell<D> {
    /// Interpolates a slice with `W` values per node.
    #[inline(always)]
    fn apply<const W: usize>(&self, slice: &[f64]) -> [f64; W] {
        let mut out = [0.0; W];
        for c in 0..(1usize << D) {
            let mut flat = 0usize;
            let mut w = 1.0;
            for a in 0..D {
                if (c >> a) & 1 == 1 {
                    flat += self.hi[a];
                    w *= self.frac[a];
                } else {
                    flat += self.lo[a];
                    w *= 1.0 - self.frac[a];
                }
            }
            let row = &slice[flat * W..flat * W + W];
            for j in 0..W {
                out[j] += w * row[j];
            }
        }
        out
    }
}

/// Batched simulator of all `(start time, node)` ensembles for a fixed
/// coefficient set, grid and time resolution.
pub struct FlowKernel<'a> {
    pub set: &'a CoefficientSet,
    pub grid: Grid,
    pub mesh: TimeMesh,
    /// `M`.
    pub time_steps: usize,
    pub mc: McConfig,
    coords: Vec<f64>,
    /// Evaluation grid, `mc.refine` times finer than `grid` per axis.
    fine: Grid,
    fine_strides: [usize; 3],
    /// `V_{T-s_k}` at every `fine` node for every global step `k`, when nonzero.
    v_slices: Option<Vec<f64>>,
}

impl<'a> FlowKernel<'a> {
    pub fn new(set: &'a CoefficientSet, grid_cfg: &GridConfig, mc: &McConfig) -> Result<Self> {
        mc.validate()?;
        let grid = Grid::new(set.domain, grid_cfg.n)?;
        let d = set.dim();
        let mesh = TimeMesh::global(set.horizon, mc.dt)?;
        let big_m = grid_cfg.time_steps;
        if big_m == 0 || mesh.total_steps % big_m != 0 {
            return Err(Error::Mesh(format!(
                "{} Euler steps cannot be split into M = {big_m} equal start-time intervals",
                mesh.total_steps
            )));
        }
        if mesh.dt > mc.dt_max * (1.0 + 1e-12) {
            return Err(Error::Configuration(format!(
                "dt = {} exceeds dt_max = {}",
                mesh.dt, mc.dt_max
            )));
        }
        let nodes = grid.nodes();
        let coords: Vec<f64> = (0..nodes).flat_map(|i| grid.node_coords(i)).collect();
        let fine = refined_grid(&grid, mc.refine)?;
        let v_slices = if set.has_forcing() {
            let fnodes = fine.nodes();
            let mut v = vec![0.0; (mesh.total_steps + 1) * fnodes * d];
            for i in 0..fnodes {
                let x = fine.node_coords(i);
                for k in 0..=mesh.total_steps {
                    let off = (k * fnodes + i) * d;
                    set.forcing_v(set.horizon - mesh.time(k), &x, &mut v[off..off + d])?;
                }
            }
            Some(v)
        } else {
            None
        };
        Ok(Self {
            set,
            grid,
            mesh,
            time_steps: big_m,
            mc: *mc,
            coords,
            fine_strides: [0, 1, 2].map(|a| if a < d { fine.stride(a) } else { 0 }),
            fine,
            v_slices,
        })
    }

    /// Global Euler index of start time `s_m`.
    pub fn start_step(&self, m: usize) -> usize {
        m * (self.mesh.total_steps / self.time_steps)
    }

    /// Empty field over the start times.
    pub fn field(&self, components: usize) -> Result<SpaceTimeField> {
        SpaceTimeField::zeros(self.grid, self.set.horizon, self.time_steps, components)
    }

    /// Per global Euler step and `fine` node: the drift (refined in space,
    /// linear in time between field slices) followed by `V` when the set
    /// has forcing.
    fn step_slices(&self, drift: &SpaceTimeField) -> Result<(Vec<f64>, usize)> {
        let d = self.set.dim();
        if drift.grid != self.grid || drift.components != d || drift.steps() != self.time_steps {
            return Err(Error::Shape("drift field does not match the kernel grid".into()));
        }
        let refined: Vec<Vec<f64>> = (0..=self.time_steps)
            .map(|m| refine_slice(&self.grid, drift.slice(m), d, self.mc.refine))
            .collect();
        let nodes = self.fine.nodes();
        let width = if self.v_slices.is_some() { 2 * d } else { d };
        let len = nodes * width;
        let mut out = vec![0.0; (self.mesh.total_steps + 1) * len];
        for k in 0..=self.mesh.total_steps {
            let (m, w) = drift.time_weights(self.mesh.time(k))?;
            let (a, b) = (&refined[m], &refined[(m + 1).min(self.time_steps)]);
            let dst = &mut out[k * len..(k + 1) * len];
            for i in 0..nodes {
                for j in 0..d {
                    let x = a[i * d + j];
                    dst[i * width + j] = if w == 0.0 { x } else { (1.0 - w) * x + w * b[i * d + j] };
                }
                if let Some(v) = &self.v_slices {
                    let src = &v[(k * nodes + i) * d..(k * nodes + i + 1) * d];
                    dst[i * width + d..(i + 1) * width].copy_from_slice(src);
                }
            }
        }
        Ok((out, width))
    }

    /// Simulates every `(s_m, node)` ensemble under `drift` (a field over SDE
    /// time) and collects node-wise statistics of `functional.terminal`.
    /// Particle `p` of start time `s_m` reads stream `(tag, start step of m, p)`.
    pub fn statistics<F: DriftFunctional, E: Executor>(
        &self,
        drift: &SpaceTimeField,
        functional: &F,
        rng: &RngContract,
        tag: StreamTag,
        derivatives: bool,
        exec: &E,
    ) -> Result<FlowStatistics> {
        if derivatives && self.grid.domain.kind != DomainKind::Torus {
            return Err(Error::Domain("path derivatives are only available on the torus".into()));
        }
        let (slices, width) = self.step_slices(drift)?;
        let d = self.set.dim();
        let n = self.mc.particles;
        let block = self.mc.block.max(1);
        let blocks = n.div_ceil(block);
        let big_m = self.time_steps;
        let tasks = (big_m + 1) * blocks;
        let parts = exec.map(tasks, |task| {
            let m = task / blocks;
            let b = task % blocks;
            let range = (b * block)..((b + 1) * block).min(n);
            let args = (&slices[..], functional, rng, tag, m, range, derivatives);
            match (d, width) {
                (1, 1) => self.run_block::<1, 1, F>(args),
                (1, _) => self.run_block::<1, 2, F>(args),
                (2, 2) => self.run_block::<2, 2, F>(args),
                (2, _) => self.run_block::<2, 4, F>(args),
                (_, 3) => self.run_block::<3, 3, F>(args),
                _ => self.run_block::<3, 6, F>(args),
            }
        });
        let mut mean = self.field(d)?;
        let mut se = self.field(d)?;
        let mut grad = match derivatives {
            true => Some((self.field(d * d)?, self.field(d * d)?)),
            false => None,
        };
        let mut div = match derivatives {
            true => Some((self.field(1)?, self.field(1)?)),
            false => None,
        };
        let mut iter = parts.into_iter();
        for m in 0..=big_m {
            let mut acc: Option<BlockMoments> = None;
            for _ in 0..blocks {
                let part = iter.next().unwrap()?;
                match &mut acc {
                    None => acc = Some(part),
                    Some(a) => a.merge(&part),
                }
            }
            let acc = acc.unwrap();
            let est = acc.value.estimate();
            mean.slice_mut(m).copy_from_slice(&est.value);
            se.slice_mut(m).copy_from_slice(&est.std_error);
            if let (Some((gm, gs)), Some(g)) = (&mut grad, &acc.gradient) {
                let e = g.estimate();
                gm.slice_mut(m).copy_from_slice(&e.value);
                gs.slice_mut(m).copy_from_slice(&e.std_error);
            }
            if let (Some((dm, ds)), Some(g)) = (&mut div, &acc.divergence) {
                let e = g.estimate();
                dm.slice_mut(m).copy_from_slice(&e.value);
                ds.slice_mut(m).copy_from_slice(&e.std_error);
            }
        }
        Ok(FlowStatistics {
            mean,
            std_error: se,
            gradient: grad,
            divergence: div,
            particles: n,
        })
    }

    /// Cell of `x` on the evaluation grid; torus coordinates are wrapped
    /// into `[0, 1)` in place.
    #[inline(always)]
    fn locate<const D: usize>(&self, x: &mut [f64; D]) -> Result<Cell<D>> {
        locate_in(&self.fine, &self.fine_strides, x)
    }

    /// Simulates the ensembles of start step `m` for the particles in `range`.
    fn run_block<const D: usize, const W: usize, F: DriftFunctional>(
        &self,
        (slices, functional, rng, tag, m, range, derivatives): BlockArgs<'_, F>,
    ) -> Result<BlockMoments> {
        let nodes = self.grid.nodes();
        let set = self.set;
        let horizon = set.horizon;
        let k0 = self.start_step(m);
        let big_k = self.mesh.total_steps;
        let dt = self.mesh.dt;
        let dt_sqrt = libm::sqrt(dt);
        let sigma = set.is_isotropic().then(|| libm::sqrt(2.0 * set.kappa));
        let key = StreamKey::new(tag, k0 as u64);
        let len = self.fine.nodes() * W;
        let mut out = BlockMoments {
            value: Moments::new(nodes * D),
            gradient: derivatives.then(|| Moments::new(nodes * D * D)),
            divergence: derivatives.then(|| Moments::new(nodes)),
        };
        let mut pos = vec![[0.0f64; D]; nodes];
        let mut acc = vec![[0.0f64; D]; nodes];
        let mut sample = vec![0.0; nodes * D];
        let fast = self.grid.domain.kind == DomainKind::Torus && sigma.is_some();
        let mut strides = [0usize; D];
        strides.copy_from_slice(&self.fine_strides[..D]);
        for p in range {
            let mut stream = rng.stream(key, p as u64, D);
            for (i, x) in pos.iter_mut().enumerate() {
                x.copy_from_slice(&self.coords[i * D..(i + 1) * D]);
            }
            acc.iter_mut().for_each(|a| *a = [0.0; D]);
            let mut dw = [0.0; D];
            for k in k0..big_k {
                stream.increment(k as u64, dt_sqrt, &mut dw);
                let slice = &slices[k * len..(k + 1) * len];
                let wv = if k == k0 { 0.5 * dt } else { dt };
                let bad = if fast {
                    let sig = sigma.unwrap_or(0.0);
                    let mut shift = [0.0; D];
                    for a in 0..D {
                        shift[a] = sig * dw[a];
                    }
                    torus_sweep::<D, W>(&mut pos, &mut acc, slice, wv, dt, shift, self.fine.n, strides)
                } else {
                    let s = self.mesh.time(k);
                    let mut bad = false;
                    for (x, acc) in pos.iter_mut().zip(acc.iter_mut()) {
                        let bv = self.locate::<D>(x)?.apply::<W>(slice);
                        if W > D {
                            for a in 0..D {
                                acc[a] += wv * bv[D + a];
                            }
                        }
                        let mut noise = [0.0; D];
                        match sigma {
                            Some(sig) => (0..D).for_each(|a| noise[a] = sig * dw[a]),
                            None => {
                                let mat = set.noise_matrix(horizon - s, &x[..])?;
                                for a in 0..D {
                                    for c in 0..D {
                                        noise[a] += mat[a * D + c] * dw[c];
                                    }
                                }
                            }
                        }
                        for a in 0..D {
                            x[a] += bv[a] * dt + noise[a];
                            bad |= !x[a].is_finite();
                        }
                    }
                    bad
                };
                if bad {
                    return Err(Error::Simulation {
                        particle: p,
                        step: k + 1,
                        detail: format!("non-finite position from start time index {m}"),
                    });
                }
            }
            let end_slice = &slices[big_k * len..(big_k + 1) * len];
            for i in 0..nodes {
                let x = &mut pos[i];
                if W > D && k0 < big_k {
                    let bv = self.locate::<D>(x)?.apply::<W>(end_slice);
                    for a in 0..D {
                        acc[i][a] += 0.5 * dt * bv[D + a];
                    }
                }
                functional.terminal(set, &x[..], &acc[i], &mut sample[i * D..(i + 1) * D]);
            }
            out.value.push(&sample);
            if derivatives {
                let g = gradient_of(&self.grid, &sample, D)?;
                let dv = divergence_of(&self.grid, &sample, D)?;
                out.gradient.as_mut().unwrap().push(&g);
                out.divergence.as_mut().unwrap().push(&dv);
            }
        }
        Ok(out)
    }

    /// One application of the map: `base - E[path quantity]` at every
    /// `(s_m, node)`, with node-wise standard errors.
    pub fn apply_map<F: DriftFunctional, E: Executor>(
        &self,
        drift: &SpaceTimeField,
        functional: &F,
        rng: &RngContract,
        tag: StreamTag,
        exec: &E,
    ) -> Result<(SpaceTimeField, SpaceTimeField)> {
        let stats = self.statistics(drift, functional, rng, tag, false, exec)?;
        let d = self.set.dim();
        let mut out = stats.mean;
        let mut base = [0.0; 3];
        for m in 0..=self.time_steps {
            let s = out.times[m];
            for i in 0..self.grid.nodes() {
                functional.base(self.set, s, &self.coords[i * d..(i + 1) * d], &mut base[..d]);
                for (v, b) in out.value_mut(m, i).iter_mut().zip(&base[..d]) {
                    *v = b - *v;
                }
            }
        }
        Ok((out, stats.std_error))
    }
}

/// Cell of `x` in `grid`; torus coordinates are wrapped into `[0, 1)` in place.
#[inline(always)]
fn locate_in<const D: usize>(grid: &Grid, strides: &[usize; 3], x: &mut [f64; D]) -> Result<Cell<D>> {
    let n = grid.n;
    let mut cell = Cell {
        lo: [0; D],
        hi: [0; D],
        frac: [0.0; D],
    };
    if grid.domain.kind == DomainKind::Torus {
        let nf = n as f64;
        for a in 0..D {
            let mut y = x[a];
            if !(0.0..1.0).contains(&y) {
                y -= libm::floor(y);
                if y >= 1.0 {
                    y = 0.0;
                }
            }
            x[a] = y;
            let xi = y * nf;
            let i = (xi as usize).min(n - 1);
            let stride = strides[a];
            cell.lo[a] = i * stride;
            cell.hi[a] = if i + 1 == n { 0 } else { (i + 1) * stride };
            cell.frac[a] = xi - i as f64;
        }
    } else {
        let lo = grid.domain.lo;
        let h = grid.h();
        for a in 0..D {
            let xi = (x[a] - lo) / h;
            if !(xi >= 0.0 && xi <= (n - 1) as f64) {
                return Err(Error::Extrapolation {
                    point: x.to_vec(),
                    lo,
                    hi: grid.domain.hi,
                });
            }
            let i = (xi as usize).min(n - 2);
            let stride = strides[a];
            cell.lo[a] = i * stride;
            cell.hi[a] = (i + 1) * stride;
            cell.frac[a] = xi - i as f64;
        }
    }
    Ok(cell)
}

type BlockArgs<'a, F> = (&'a [f64], &'a F, &'a RngContract, StreamTag, usize, core::ops::Range<usize>, bool);

/// One Euler step of every node on the torus with isotropic noise `shift`.
/// Slices hold `W` values per node: the drift, then `V` when `W > D`.
/// Returns true if a position became non-finite.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn torus_sweep<const D: usize, const W: usize>(
    pos: &mut [[f64; D]],
    acc: &mut [[f64; D]],
    slice: &[f64],
    wv: f64,
    dt: f64,
    shift: [f64; D],
    n: usize,
    strides: [usize; D],
) -> bool {
    let nf = n as f64;
    let mut bad = false;
    for (x, acc) in pos.iter_mut().zip(acc.iter_mut()) {
        let mut cell = Cell {
            lo: [0; D],
            hi: [0; D],
            frac: [0.0; D],
        };
        for a in 0..D {
            let mut y = x[a];
            if !(0.0..1.0).contains(&y) {
                y -= libm::floor(y);
                if y >= 1.0 {
                    y = 0.0;
                }
            }
            let xi = y * nf;
            let i = (xi as i64 as usize).min(n - 1);
            cell.lo[a] = i * strides[a];
            cell.hi[a] = if i + 1 == n { 0 } else { (i + 1) * strides[a] };
            cell.frac[a] = xi - i as f64;
            x[a] = y;
        }
        let bv = cell.apply::<W>(slice);
        if W > D {
            for a in 0..D {
                acc[a] += wv * bv[D + a];
            }
        }
        for a in 0..D {
            x[a] += bv[a] * dt + shift[a];
            bad |= !x[a].is_finite();
        }
    }
    bad
}

/// Grid with `r` times as many cells per axis as `grid`, containing its nodes.
fn refined_grid(grid: &Grid, r: usize) -> Result<Grid> {
    let n = match grid.domain.kind {
        DomainKind::Torus => grid.n * r,
        DomainKind::FreeSpace => (grid.n - 1) * r + 1,
    };
    Grid::new(grid.domain, n)
}

/// Keys cubic convolution weights (`a = -1/2`) of the nodes at offsets
/// `-1, 0, 1, 2` for a point at fraction `f` of a cell.
fn cubic_weights(f: f64) -> [f64; 4] {
    let f2 = f * f;
    let f3 = f2 * f;
    [
        -0.5 * f3 + f2 - 0.5 * f,
        1.5 * f3 - 2.5 * f2 + 1.0,
        -1.5 * f3 + 2.0 * f2 + 0.5 * f,
        0.5 * f3 - 0.5 * f2,
    ]
}

/// Values of a `c`-component slice on [`refined_grid`]: periodic cubic
/// convolution on the torus, multilinear on free space.
fn refine_slice(grid: &Grid, slice: &[f64], c: usize, r: usize) -> Vec<f64> {
    if r == 1 {
        return slice.to_vec();
    }
    let d = grid.dim();
    let n = grid.n;
    let torus = grid.domain.kind == DomainKind::Torus;
    let fine_n = if torus { n * r } else { (n - 1) * r + 1 };
    // per axis and fine index: coarse indices and weights
    let taps: Vec<([usize; 4], [f64; 4])> = (0..fine_n)
        .map(|j| {
            let (i, f) = (j / r, (j % r) as f64 / r as f64);
            if torus {
                let idx = [(i + n - 1) % n, i, (i + 1) % n, (i + 2) % n];
                (idx, cubic_weights(f))
            } else {
                let i = i.min(n - 2);
                let f = (j - i * r) as f64 / r as f64;
                ([i, i, i + 1, i + 1], [0.0, 1.0 - f, f, 0.0])
            }
        })
        .collect();
    let fine_nodes = fine_n.pow(d as u32);
    let mut out = vec![0.0; fine_nodes * c];
    let mut fine_idx = [0usize; 3];
    for (node, dst) in out.chunks_mut(c).enumerate() {
        let mut rest = node;
        for a in (0..d).rev() {
            fine_idx[a] = rest % fine_n;
            rest /= fine_n;
        }
        for corner in 0..4usize.pow(d as u32) {
            let mut flat = 0;
            let mut w = 1.0;
            let mut q = corner;
            for a in 0..d {
                let (idx, wt) = &taps[fine_idx[a]];
                let t = q % 4;
                q /= 4;
                flat = flat * n + idx[t];
                w *= wt[t];
            }
            if w != 0.0 {
                for (o, v) in dst.iter_mut().zip(&slice[flat * c..flat * c + c]) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

struct BlockMoments {
    value: Moments,
    gradient: Option<Moments>,
    divergence: Option<Moments>,
}

impl BlockMoments {
    fn merge(&mut self, other: &BlockMoments) {
        self.value.merge(&other.value);
        if let (Some(a), Some(b)) = (&mut self.gradient, &other.gradient) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (&mut self.divergence, &other.divergence) {
            a.merge(b);
        }
    }
}

/// Reference assembly of the drift from explicitly simulated ensembles, one
/// per `(start time index, node)`; `∫V` uses the trapezoidal rule with `V`
/// evaluated at the particle positions.
///
/// Returns the drift and its node-wise standard errors (largest component).
pub fn assemble_drift<F: DriftFunctional>(
    set: &CoefficientSet,
    grid: &Grid,
    time_steps: usize,
    ensembles: &[((usize, usize), &ParticleEnsemble)],
    functional: &F,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let d = set.dim();
    let nodes = grid.nodes();
    let mut field = SpaceTimeField::zeros(*grid, set.horizon, time_steps, d)?;
    let mut se = SpaceTimeField::zeros(*grid, set.horizon, time_steps, 1)?;
    let mut seen = vec![false; (time_steps + 1) * nodes];
    for &((m, node), ens) in ensembles {
        if m > time_steps || node >= nodes {
            return Err(Error::Shape(format!("ensemble index ({m}, {node}) outside the grid")));
        }
        let start = ens.start_time();
        if (start - field.times[m]).abs() > 1e-9 * set.horizon || (ens.mesh.t_end() - set.horizon).abs() > 1e-12 {
            return Err(Error::Mesh(format!(
                "ensemble ({m}, {node}) covers [{start}, {}], expected [{}, {}]",
                ens.mesh.t_end(),
                field.times[m],
                set.horizon
            )));
        }
        let x0 = grid.node_coords(node);
        let dt = ens.mesh.dt;
        let mut moments = Moments::new(d);
        let mut sample = [0.0; 3];
        let mut v = [0.0; 3];
        for p in 0..ens.particles {
            let mut integral = [0.0; 3];
            for j in 0..=ens.mesh.steps {
                if ens.mesh.steps == 0 {
                    break;
                }
                let w = if j == 0 || j == ens.mesh.steps { 0.5 * dt } else { dt };
                let s = ens.mesh.time(ens.mesh.start_step + j);
                set.forcing_v(set.horizon - s, ens.position(p, j), &mut v[..d])?;
                for a in 0..d {
                    integral[a] += w * v[a];
                }
            }
            functional.terminal(set, ens.terminal(p), &integral[..d], &mut sample[..d]);
            moments.push(&sample[..d]);
        }
        let est = moments.estimate();
        let mut base = [0.0; 3];
        functional.base(set, field.times[m], &x0, &mut base[..d]);
        for a in 0..d {
            field.value_mut(m, node)[a] = base[a] - est.value[a];
        }
        se.value_mut(m, node)[0] = est.max_se();
        seen[m * nodes + node] = true;
    }
    let missing: Vec<(usize, usize)> = seen
        .iter()
        .enumerate()
        .filter(|(_, &s)| !s)
        .map(|(i, _)| (i / nodes, i % nodes))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    Ok((field, se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Converged,
    MaxIterations,
    Diverged,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::MaxIterations => "max-iterations",
            Verdict::Diverged => "diverged",
        }
    }
}

/// History of a Picard run.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardState {
    /// Number of completed iterations `k` (the initial iterate is `k = 0`).
    pub iteration: usize,
    /// Current iterate `ū^k` over SDE time.
    pub drift: SpaceTimeField,
    /// `‖ū^k - ū^{k-1}‖∞` for `k = 1..`.
    pub gaps: Vec<f64>,
    /// Per iteration, the gap restricted to each start time `s_m`.
    pub gap_profiles: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    /// Per iteration, `max_m e^{-λ(T - s_m)} · gap_m` for each `λ`.
    pub weighted_gaps: Vec<Vec<f64>>,
    /// Per iteration, the largest node-wise standard error of the map.
    pub max_node_se: Vec<f64>,
    /// Node-wise standard errors of the last map evaluation (largest component).
    pub node_se: SpaceTimeField,
    pub verdict: Verdict,
    /// Convergence tolerance of the run.
    pub tol: f64,
}

impl PicardState {
    /// Ratios `gap_{k+1} / gap_k`; `None` where the previous gap is zero.
    pub fn gap_ratios(&self) -> Vec<Option<f64>> {
        ratios(&self.gaps)
    }
}

fn ratios(v: &[f64]) -> Vec<Option<f64>> {
    v.windows(2)
        .map(|w| (w[0] > 0.0).then(|| w[1] / w[0]))
        .collect()
}

/// Largest Euclidean nodal difference, overall and per time slice.
pub fn field_gap(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<(f64, Vec<f64>)> {
    if a.values.len() != b.values.len() || a.components != b.components {
        return Err(Error::Shape("fields have different shapes".into()));
    }
    let c = a.components;
    let mut profile = vec![0.0f64; a.times.len()];
    for (m, slot) in profile.iter_mut().enumerate() {
        for i in 0..a.nodes() {
            let x = a.value(m, i);
            let y = b.value(m, i);
            let e = libm::sqrt((0..c).map(|j| (x[j] - y[j]) * (x[j] - y[j])).sum::<f64>());
            if !e.is_finite() {
                return Err(Error::Simulation {
                    particle: 0,
                    step: 0,
                    detail: format!("non-finite drift value at time index {m}, node {i}"),
                });
            }
            *slot = slot.max(e);
        }
    }
    Ok((profile.iter().cloned().fold(0.0, f64::max), profile))
}

fn max_component(se: &SpaceTimeField) -> SpaceTimeField {
    let c = se.components;
    let mut out = SpaceTimeField {
        grid: se.grid,
        times: se.times.clone(),
        components: 1,
        values: vec![0.0; se.values.len() / c],
    };
    for (o, chunk) in out.values.iter_mut().zip(se.values.chunks(c)) {
        *o = chunk.iter().cloned().fold(0.0, f64::max);
    }
    out
}

/// Runs the damped Picard iteration from `ū⁰ = Φ(0)` until the gap drops to
/// `tol`, `max_iter` is reached, or the gap exceeds `divergence_factor`
/// times the first gap. Every map evaluation reuses the same streams.
pub fn picard_solve<F: DriftFunctional, E: Executor>(
    set: &CoefficientSet,
    grid_cfg: &GridConfig,
    mc: &McConfig,
    picard: &PicardConfig,
    functional: &F,
    rng: &RngContract,
    exec: &E,
) -> Result<PicardState> {
    picard.validate()?;
    let kernel = FlowKernel::new(set, grid_cfg, mc)?;
    picard_with_kernel(&kernel, picard, functional, rng, exec, |_| {})
}

/// [`picard_solve`] on a prepared kernel, calling `progress` after every iteration.
pub fn picard_with_kernel<F: DriftFunctional, E: Executor>(
    kernel: &FlowKernel<'_>,
    picard: &PicardConfig,
    functional: &F,
    rng: &RngContract,
    exec: &E,
    mut progress: impl FnMut(&PicardState),
) -> Result<PicardState> {
    picard.validate()?;
    let d = kernel.set.dim();
    let horizon = kernel.set.horizon;
    let zero = kernel.field(d)?;
    let (mut drift, se0) = kernel.apply_map(&zero, functional, rng, StreamTag::PICARD, exec)?;
    let mut state = PicardState {
        iteration: 0,
        drift: drift.clone(),
        gaps: Vec::new(),
        gap_profiles: Vec::new(),
        lambdas: picard.lambdas.clone(),
        weighted_gaps: Vec::new(),
        max_node_se: vec![se0.values.iter().cloned().fold(0.0, f64::max)],
        node_se: max_component(&se0),
        verdict: Verdict::MaxIterations,
        tol: picard.tol,
    };
    let theta = picard.damping;
    for k in 1..=picard.max_iter {
        let (mapped, se) = kernel.apply_map(&drift, functional, rng, StreamTag::PICARD, exec)?;
        let mut next = mapped;
        if theta < 1.0 {
            for (n, o) in next.values.iter_mut().zip(&drift.values) {
                *n = (1.0 - theta) * o + theta * *n;
            }
        }
        let (gap, profile) = field_gap(&next, &drift)?;
        let weighted = picard
            .lambdas
            .iter()
            .map(|&l| {
                profile
                    .iter()
                    .zip(&next.times)
                    .map(|(g, s)| libm::exp(-l * (horizon - s)) * g)
                    .fold(0.0, f64::max)
            })
            .collect();
        drift = next;
        state.iteration = k;
        state.drift = drift.clone();
        state.gaps.push(gap);
        state.gap_profiles.push(profile);
        state.weighted_gaps.push(weighted);
        state.max_node_se.push(se.values.iter().cloned().fold(0.0, f64::max));
        state.node_se = max_component(&se);
        if gap <= picard.tol {
            state.verdict = Verdict::Converged;
        } else if gap > picard.divergence_factor * state.gaps[0] {
            state.verdict = Verdict::Diverged;
        }
        progress(&state);
        if state.verdict != Verdict::MaxIterations {
            return Ok(state);
        }
    }
    Ok(state)
}

/// Weighted gap sequence and its successive ratios for one `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionRow {
    pub lambda: f64,
    pub weighted_gaps: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
}

/// Weighted gaps `max_m e^{-λ(T - s_m)} gap_m` per iteration for each `λ`.
pub fn contraction_report(state: &PicardState, lambdas: &[f64]) -> Result<Vec<ContractionRow>> {
    if state.gap_profiles.len() < 2 {
        return Err(Error::NotConverged(format!(
            "contraction report needs at least 2 iterations, have {}",
            state.gap_profiles.len()
        )));
    }
    let horizon = state.drift.horizon();
    Ok(lambdas
        .iter()
        .map(|&l| {
            let weighted: Vec<f64> = state
                .gap_profiles
                .iter()
                .map(|profile| {
                    profile
                        .iter()
                        .zip(&state.drift.times)
                        .map(|(g, s)| libm::exp(-l * (horizon - s)) * g)
                        .fold(0.0, f64::max)
                })
                .collect();
            ContractionRow {
                lambda: l,
                ratios: ratios(&weighted),
                weighted_gaps: weighted,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Pressure, ScenarioPreset};
    use crate::exec::Sequential;
    use crate::fields::DomainDescriptor;
    use crate::sde::{simulate_flow, GridDrift, StartPoints};
    use alloc::sync::Arc;

    fn small_mc(horizon: f64, particles: usize) -> McConfig {
        McConfig {
            block: 16,
            ..McConfig::for_horizon(horizon, particles)
        }
    }

    #[test]
    fn refinement_keeps_nodes_and_beats_linear() {
        let f = |x: f64, y: f64| libm::sin(core::f64::consts::TAU * x) * libm::cos(core::f64::consts::TAU * y);
        let grid = Grid::new(DomainDescriptor::torus(2), 16).unwrap();
        let coarse: Vec<f64> = (0..grid.nodes())
            .flat_map(|i| {
                let x = grid.node_coords(i);
                [f(x[0], x[1]), 2.0]
            })
            .collect();
        let fine = refined_grid(&grid, 4).unwrap();
        let cubic = refine_slice(&grid, &coarse, 2, 4);
        let (mut err, mut lin_err) = (0.0f64, 0.0f64);
        for i in 0..fine.nodes() {
            let x = fine.node_coords(i);
            let want = f(x[0], x[1]);
            let lin = grid.stencil(&x).unwrap();
            let lin: f64 = (0..lin.corners).map(|c| lin.weights[c] * coarse[2 * lin.nodes[c]]).sum();
            err = err.max((cubic[2 * i] - want).abs());
            lin_err = lin_err.max((lin - want).abs());
            assert!((cubic[2 * i + 1] - 2.0).abs() < 1e-14);
            if x.iter().all(|v| (v * 16.0 - libm::round(v * 16.0)).abs() < 1e-9) {
                assert!((cubic[2 * i] - want).abs() < 1e-14);
            }
        }
        assert!(err < 0.2 * lin_err, "cubic {err} linear {lin_err}");

        let free = Grid::new(DomainDescriptor::free_space(1, -1.0, 1.0), 5).unwrap();
        let ramp: Vec<f64> = (0..5).map(|i| 3.0 * free.node_coords(i)[0] + 1.0).collect();
        let fine = refined_grid(&free, 3).unwrap();
        let up = refine_slice(&free, &ramp, 1, 3);
        assert_eq!(up.len(), 13);
        for (i, v) in up.iter().enumerate() {
            assert!((v - (3.0 * fine.node_coords(i)[0] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_u0_is_an_exact_fixed_point() {
        let set = ScenarioPreset::ConstantU0(vec![0.3, -0.2])
            .build(DomainDescriptor::torus(2), 0.5, 0.1)
            .unwrap();
        let grid = GridConfig { n: 8, time_steps: 5 };
        let state = picard_solve(&set, &grid, &small_mc(0.5, 40), &PicardConfig::default(), &StandardFunctional, &RngContract::new(1), &Sequential).unwrap();
        assert_eq!(state.verdict, Verdict::Converged);
        assert_eq!(state.iteration, 1);
        assert_eq!(state.gaps, vec![0.0]);
        assert!(state.drift.values.chunks(2).all(|v| v == [-0.3, 0.2]));
        assert!(state.node_se.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_data_gives_zero_drift() {
        let set = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::torus(1), 0.5, 0.1)
            .unwrap();
        let grid = GridConfig { n: 16, time_steps: 10 };
        let state = picard_solve(&set, &grid, &small_mc(0.5, 20), &PicardConfig::default(), &StandardFunctional, &RngContract::new(2), &Sequential).unwrap();
        assert_eq!(state.gaps, vec![0.0]);
        assert!(state.drift.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_constant_forcing_enters_linearly() {
        let mut set = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::torus(1), 0.5, 0.1)
            .unwrap();
        let w = 0.75;
        set.pressure = Pressure::Analytic {
            value: Arc::new(move |_, x| -w * x[0]),
            gradient: Arc::new(move |_, _, o| o[0] = -w),
            laplacian: None,
        };
        set.b0 = Some(Arc::new(|_, x, o| o[0] = 0.1 * x[0]));
        let grid = GridConfig { n: 8, time_steps: 4 };
        let kernel = FlowKernel::new(&set, &grid, &small_mc(0.5, 10)).unwrap();
        let zero = kernel.field(1).unwrap();
        let (f, se) = kernel.apply_map(&zero, &StandardFunctional, &RngContract::new(3), StreamTag::PICARD, &Sequential).unwrap();
        for m in 0..=4 {
            let s = f.times[m];
            for i in 0..8 {
                let x = kernel.grid.coord(i);
                let expect = 0.1 * x - w * (0.5 - s);
                assert!((f.value(m, i)[0] - expect).abs() < 1e-12);
                assert_eq!(se.value(m, i)[0], 0.0);
            }
        }
    }

    #[test]
    fn kernel_matches_explicit_ensembles() {
        let set = ScenarioPreset::Burgers1D { amplitude: 0.5 }
            .build(DomainDescriptor::torus(1), 0.5, 0.1)
            .unwrap();
        let grid_cfg = GridConfig { n: 8, time_steps: 5 };
        let mc = McConfig { refine: 1, ..small_mc(0.5, 30) };
        let kernel = FlowKernel::new(&set, &grid_cfg, &mc).unwrap();
        let rng = RngContract::new(4);
        let drift = SpaceTimeField::from_fn(kernel.grid, 0.5, 5, 1, |s, x, o| {
            o[0] = -0.4 * libm::sin(core::f64::consts::TAU * x[0]) * (1.0 - s)
        })
        .unwrap();
        let (fast, _) = kernel.apply_map(&drift, &StandardFunctional, &rng, StreamTag::PICARD, &Sequential).unwrap();
        let frozen = GridDrift { field: drift.clone() };
        let mut ensembles = Vec::new();
        for m in 0..=5 {
            let k0 = kernel.start_step(m);
            let mesh = kernel.mesh.span_steps(k0, kernel.mesh.total_steps).unwrap();
            for node in 0..8 {
                let ens = simulate_flow(
                    &set,
                    &frozen,
                    mesh,
                    &StartPoints::Single(kernel.grid.node_coords(node)),
                    30,
                    &rng,
                    StreamKey::new(StreamTag::PICARD, k0 as u64),
                    false,
                    &mc,
                    &Sequential,
                )
                .unwrap();
                ensembles.push(((m, node), ens));
            }
        }
        let refs: Vec<_> = ensembles.iter().map(|(k, e)| (*k, e)).collect();
        let (slow, _) = assemble_drift(&set, &kernel.grid, 5, &refs, &StandardFunctional).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-10);
        let err = assemble_drift(&set, &kernel.grid, 5, &refs[1..], &StandardFunctional).unwrap_err();
        assert!(matches!(err, Error::Coverage { ref missing } if missing == &vec![(0, 0)]));
    }

    #[test]
    fn picard_is_deterministic_and_executor_independent() {
        let set = ScenarioPreset::Burgers1D { amplitude: 0.5 }
            .build(DomainDescriptor::torus(1), 0.5, 0.1)
            .unwrap();
        let grid = GridConfig { n: 16, time_steps: 10 };
        let mc = small_mc(0.5, 200);
        let cfg = PicardConfig { max_iter: 3, ..PicardConfig::default() };
        let rng = RngContract::new(5);
        let a = picard_solve(&set, &grid, &mc, &cfg, &StandardFunctional, &rng, &Sequential).unwrap();
        let b = picard_solve(&set, &grid, &McConfig { block: 7, ..mc }, &cfg, &StandardFunctional, &rng, &Sequential).unwrap();
        let c = picard_solve(&set, &grid, &mc, &cfg, &StandardFunctional, &rng, &Sequential).unwrap();
        assert_eq!(a, c);
        assert!(a.drift.max_abs_diff(&b.drift).unwrap() < 1e-12);
        let report = contraction_report(&a, &[0.0, 5.0]).unwrap();
        assert_eq!(report.len(), 2);
        for (w0, w5) in report[0].weighted_gaps.iter().zip(&report[1].weighted_gaps) {
            assert!(w5 <= w0);
        }
    }

    #[test]
    fn contraction_report_of_trivial_run() {
        let set = ScenarioPreset::ConstantU0(vec![0.3])
            .build(DomainDescriptor::torus(1), 0.5, 0.1)
            .unwrap();
        let grid = GridConfig { n: 8, time_steps: 4 };
        let mut state = picard_solve(&set, &grid, &small_mc(0.5, 10), &PicardConfig::default(), &StandardFunctional, &RngContract::new(6), &Sequential).unwrap();
        assert!(contraction_report(&state, &[0.0]).is_err());
        state.gap_profiles.push(state.gap_profiles[0].clone());
        let rows = contraction_report(&state, &[0.0, 1.0]).unwrap();
        assert!(rows.iter().all(|r| r.ratios == vec![None]));
    }

    #[test]
    fn misaligned_time_nodes_are_rejected() {
        let set = ScenarioPreset::ZeroAll
            .build(DomainDescriptor::torus(1), 0.5, 0.1)
            .unwrap();
        let grid = GridConfig { n: 8, time_steps: 7 };
        assert!(matches!(FlowKernel::new(&set, &grid, &small_mc(0.5, 10)), Err(Error::Mesh(_))));
    }
}
