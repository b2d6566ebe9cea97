//! Deterministic random streams keyed by `(seed, tags...)`.
//!
//! Every stochastic stage derives its own generator from the run seed and a
//! short tag path (split, sample index, iteration, ...). Streams never share
//! state, so results do not depend on evaluation order or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

pub type StreamRng = ChaCha8Rng;

/// Tags naming the independent stream families.
pub mod tag {
    pub const POSE: u64 = 0x504f_5345;
    pub const RENDER: u64 = 0x5245_4e44;
    pub const SPLIT_SYNTH: u64 = 1;
    pub const SPLIT_REAL: u64 = 2;
    pub const SPLIT_TEST: u64 = 3;
    pub const MASK: u64 = 0x4d41_534b;
    pub const INIT: u64 = 0x494e_4954;
    pub const BATCH: u64 = 0x4241_5443;
    pub const AUGMENT: u64 = 0x4155_474d;
    pub const LATENT: u64 = 0x4c41_544e;
    pub const PRIOR: u64 = 0x5052_494f;
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stream identified by `seed` and `tags`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut state = seed;
    let mut acc = splitmix(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xd6e8_feb8_6659_fd93);
        acc ^= splitmix(&mut state).rotate_left(17);
        state = state.wrapping_add(acc);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn normal<S: Real, R: Rng + ?Sized>(rng: &mut R) -> S {
    let v: f64 = StandardNormal.sample(rng);
    S::from_f64(v)
}

pub fn fill_normal<S: Real, R: Rng + ?Sized>(rng: &mut R, out: &mut [S]) {
    for v in out.iter_mut() {
        *v = normal(rng);
    }
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}
