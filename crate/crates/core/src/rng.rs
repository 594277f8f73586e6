//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`SeededRng`], which is a
//! ChaCha8 block-counter generator keyed by `(seed, stream)`:
//!
//! * the 64-bit seed is expanded to the 256-bit ChaCha key with
//!   `rand_core::SeedableRng::seed_from_u64` (PCG32 expansion),
//! * the stream id selects the ChaCha nonce via `set_stream`,
//! * a uniform real is `(next_u64() >> 11) * 2^-53`, in `[0, 1)`,
//! * a standard normal is one Box-Muller draw per call:
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` with `u1`, `u2` consecutive uniforms.
//!
//! Components use the fixed stream ids in [`streams`], and child seeds are
//! derived from a root seed with [`derive_seed`], so any single component can
//! be re-run in isolation and reproduce its draws.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod streams {
    pub const BACKGROUND: u64 = 1;
    pub const TARGET_TEXTURE: u64 = 2;
    pub const MOTION: u64 = 3;
    pub const EVENTS: u64 = 4;
    pub const PIXEL_NOISE: u64 = 5;
    pub const ANNOTATION_NOISE: u64 = 16;
    pub const GATE_INIT: u64 = 32;
    pub const GATE_BATCHES: u64 = 33;
    pub const GATE_TOY_SET: u64 = 34;
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// SplitMix64 finalizer applied to `root + index * golden_gamma`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
