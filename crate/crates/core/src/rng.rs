//! Reproducible Brownian increments.
//!
//! Every particle owns a ChaCha8 stream selected by `(master seed, purpose
//! tag, start-time index)` (the key) and the particle index (the stream id).
//! Inside a stream the Gaussian vector of global Euler step `k` lives at a
//! fixed word offset, so any step can be regenerated without replaying the
//! ones before it. Noise therefore depends only on these identifiers, never on
//! execution order or thread count.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Purpose tag separating stream namespaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamTag(pub u64);

impl StreamTag {
    pub const PICARD: StreamTag = StreamTag::named("picard");
    pub const REPRESENTATION: StreamTag = StreamTag::named("representation");
    pub const ESTIMATE: StreamTag = StreamTag::named("estimate");
    pub const FLOW: StreamTag = StreamTag::named("flow");
    pub const GRADIENT: StreamTag = StreamTag::named("gradient");
    pub const OUTER: StreamTag = StreamTag::named("outer");
    pub const INNER: StreamTag = StreamTag::named("inner");

    /// FNV-1a hash of a name.
    pub const fn named(name: &str) -> Self {
        let bytes = name.as_bytes();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut i = 0;
        while i < bytes.len() {
            h ^= bytes[i] as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
            i += 1;
        }
        StreamTag(h)
    }

    /// Derived tag, e.g. a per-evaluation-point namespace.
    pub const fn child(self, index: u64) -> Self {
        StreamTag(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x51ed_270b))))
    }
}

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Master seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngContract {
    pub master_seed: u64,
}

/// Identifies the stream family of one ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub tag: StreamTag,
    pub start_index: u64,
}

impl StreamKey {
    pub fn new(tag: StreamTag, start_index: u64) -> Self {
        Self { tag, start_index }
    }
}

impl RngContract {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    fn seed_bytes(&self, key: StreamKey) -> [u8; 32] {
        let mut state = splitmix64(self.master_seed ^ 0x6a09_e667_f3bc_c908);
        state = splitmix64(state ^ key.tag.0);
        state = splitmix64(state ^ key.start_index);
        let mut out = [0u8; 32];
        for chunk in out.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        out
    }

    /// Noise stream of one particle.
    pub fn stream(&self, key: StreamKey, particle: u64, dim: usize) -> NoiseStream {
        let mut rng = ChaCha8Rng::from_seed(self.seed_bytes(key));
        rng.set_stream(particle);
        NoiseStream {
            rng,
            pairs: dim.div_ceil(2),
            dim,
            next_step: 0,
        }
    }
}

/// Gaussian vectors indexed by global Euler step.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    pairs: usize,
    dim: usize,
    next_step: u64,
}

const TWO_PI: f64 = core::f64::consts::TAU;
const INV_2_53: f64 = 1.0 / 9_007_199_254_740_992.0;

impl NoiseStream {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Standard normal vector of global step `step` (Box-Muller, 4 words per pair).
    pub fn normals(&mut self, step: u64, out: &mut [f64]) {
        if step != self.next_step {
            self.rng
                .set_word_pos(step as u128 * 4 * self.pairs as u128);
        }
        let mut filled = 0;
        for _ in 0..self.pairs {
            let a = self.rng.next_u64();
            let b = self.rng.next_u64();
            let u1 = ((a >> 11) + 1) as f64 * INV_2_53;
            let u2 = (b >> 11) as f64 * INV_2_53;
            let r = libm::sqrt(-2.0 * libm::log(u1));
            let (s, c) = libm::sincos(TWO_PI * u2);
            out[filled] = r * c;
            filled += 1;
            if filled < self.dim {
                out[filled] = r * s;
                filled += 1;
            }
        }
        self.next_step = step + 1;
    }

    /// Brownian increment `√dt · Z` of global step `step`.
    pub fn increment(&mut self, step: u64, dt_sqrt: f64, out: &mut [f64]) {
        self.normals(step, out);
        for v in out.iter_mut().take(self.dim) {
            *v *= dt_sqrt;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn random_access_matches_sequential() {
        let rng = RngContract::new(42);
        let key = StreamKey::new(StreamTag::PICARD, 3);
        let mut seq = rng.stream(key, 17, 3);
        let mut all = Vec::new();
        for k in 0..20 {
            let mut z = [0.0; 3];
            seq.normals(k, &mut z);
            all.push(z);
        }
        let mut jump = rng.stream(key, 17, 3);
        for &k in &[13u64, 2, 19, 0, 7] {
            let mut z = [0.0; 3];
            jump.normals(k, &mut z);
            assert_eq!(z, all[k as usize]);
        }
    }

    #[test]
    fn keys_separate_streams() {
        let rng = RngContract::new(1);
        let mut z = [[0.0; 2]; 4];
        rng.stream(StreamKey::new(StreamTag::PICARD, 0), 0, 2).normals(5, &mut z[0]);
        rng.stream(StreamKey::new(StreamTag::PICARD, 1), 0, 2).normals(5, &mut z[1]);
        rng.stream(StreamKey::new(StreamTag::INNER, 0), 0, 2).normals(5, &mut z[2]);
        rng.stream(StreamKey::new(StreamTag::PICARD, 0), 1, 2).normals(5, &mut z[3]);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_ne!(z[i], z[j]);
            }
        }
        let mut w = [0.0; 2];
        RngContract::new(2)
            .stream(StreamKey::new(StreamTag::PICARD, 0), 0, 2)
            .normals(5, &mut w);
        assert_ne!(w, z[0]);
    }

    #[test]
    fn increments_have_brownian_moments() {
        // 10^6 draws per axis: mean 0 and variance 2κ·dt within 5 standard errors
        let kappa = 0.1;
        let dt = 1e-2;
        let sigma = libm::sqrt(2.0 * kappa);
        let rng = RngContract::new(7);
        let key = StreamKey::new(StreamTag::ESTIMATE, 0);
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        let mut quad = [0.0f64; 2];
        let per = 1000u64;
        let particles = 1000u64;
        for p in 0..particles {
            let mut s = rng.stream(key, p, 2);
            let mut z = [0.0; 2];
            for k in 0..per {
                s.increment(k, libm::sqrt(dt), &mut z);
                for a in 0..2 {
                    let x = sigma * z[a];
                    sums[a] += x;
                    sq[a] += x * x;
                    quad[a] += x * x * x * x;
                }
            }
        }
        let n = (per * particles) as f64;
        let var = 2.0 * kappa * dt;
        for a in 0..2 {
            let mean = sums[a] / n;
            assert!(mean.abs() < 5.0 * libm::sqrt(var / n), "mean {mean}");
            let m2 = sq[a] / n;
            let se = libm::sqrt((quad[a] / n - m2 * m2) / n);
            assert!((m2 - var).abs() < 5.0 * se, "var {m2} vs {var}");
        }
    }
}
