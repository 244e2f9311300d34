//! Counter-based pseudo-noise generator.
//!
//! Every value is a pure function of `(seed, stream, index)`:
//!
//! ```text
//! base  = seed + stream * 0xD1B5_4A32_D192_ED03          (wrapping)
//! z     = base + (index + 1) * 0x9E37_79B9_7F4A_7C15      (wrapping)
//! z     = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z     = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! word  = z ^ (z >> 31)
//! ```
//!
//! which is the SplitMix64 output function applied to a Weyl sequence, so
//! other implementations can reproduce keys and attack randomness exactly.
//! Chips are `+1` when the top bit of `word` is set and `-1` otherwise;
//! uniforms are `(word >> 11) * 2^-53`.

const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless word at position `index` of stream `stream` for `seed`.
#[inline]
pub fn word(seed: u64, stream: u64, index: u64) -> u64 {
    let base = seed.wrapping_add(stream.wrapping_mul(STREAM_MUL));
    mix(base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

#[inline]
pub fn chip(seed: u64, stream: u64, index: u64) -> f64 {
    if word(seed, stream, index) >> 63 == 1 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
pub fn uniform(seed: u64, stream: u64, index: u64) -> f64 {
    (word(seed, stream, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential reader over one `(seed, stream)` pair.
#[derive(Debug, Clone)]
pub struct PnStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl PnStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let w = word(self.seed, self.stream, self.counter);
        self.counter += 1;
        w
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chip(&mut self) -> f64 {
        if self.next_u64() >> 63 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (consumes two words).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
