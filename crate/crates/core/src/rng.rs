//! Seeded random streams.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014), chosen because it
//! is a dozen lines in any language, so fixture generators written elsewhere
//! can reproduce the exact stream:
//!
//! ```text
//! state = state + 0x9E3779B97F4A7C15            (wrapping)
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9       (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB       (wrapping)
//! return z ^ (z >> 31)
//! ```
//!
//! Uniforms in `(0, 1)` are `((u >> 11) + 0.5) / 2^53`. Gaussians use the
//! Box-Muller transform on two consecutive uniforms `u1, u2`, emitting
//! `sqrt(-2 ln u1) * cos(2π u2)` then `sqrt(-2 ln u1) * sin(2π u2)`, computed
//! in f64 and rounded to f32.

use serde::{Deserialize, Serialize};

/// A 64-bit seed. Identical seeds yield bit-identical streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Derive an independent sub-seed for a named parameter or stream.
    ///
    /// `derive(label) = splitmix64_step(seed XOR fnv1a64(label))`.
    pub fn derive(self, label: &str) -> Seed {
        let mut rng = SplitMix64::new(self.0 ^ fnv1a64(label.as_bytes()));
        Seed(rng.next_u64())
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform sample in the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

impl From<Seed> for SplitMix64 {
    fn from(seed: Seed) -> Self {
        SplitMix64::new(seed.0)
    }
}
