//! Deterministic random number generation.
//!
//! A SplitMix64 generator drives every stochastic component of the crate.
//! Substreams are derived from a `(seed, index)` pair so independent samples
//! can be drawn in any order (or in parallel) while remaining bit-identical
//! to a sequential run.

use crate::fmath;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Substream for sample `index` under `seed`. Distinct `(seed, index)`
    /// pairs give statistically independent streams.
    pub fn substream(seed: u64, index: u64) -> Self {
        let scrambled = mix(seed ^ GOLDEN_GAMMA).wrapping_add(index.wrapping_mul(GOLDEN_GAMMA));
        Rng {
            state: mix(scrambled),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform draw in the half-open interval (0, 1].
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits; +1 keeps the value strictly positive so
        // ln(u) below is always finite.
        let bits = self.next_u64() >> 11;
        (bits as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw (Box–Muller).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(2.0 * fmath::PI * u2)
    }

    /// Fills `out` with i.i.d. standard normal draws.
    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.standard_normal();
        }
    }
}
