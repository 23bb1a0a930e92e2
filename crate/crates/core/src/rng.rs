//! Deterministic pseudo-random number generation.
//!
//! Every stochastic piece of the crate (weight initialization, dataset
//! splits, epoch permutations, reparameterization sampling) draws from
//! [`SplitMix64`] so that a seed fully determines a run, bit for bit, across
//! executions and platforms.
//!
//! The algorithm is the standard SplitMix64 generator: the state advances by
//! the 64-bit golden-ratio constant `0x9E3779B97F4A7C15` and the output is
//! the advanced state scrambled by two xor-shift-multiply rounds
//! (`0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`) and a final 31-bit xor-shift.

/// SplitMix64 generator. Cheap to construct; copy freely for derived streams.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; used where a logarithm of the sample is taken.
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Standard normal deviate via the Box-Muller transform (two uniforms
    /// per sample; the sine branch is discarded to keep the stream
    /// position-independent of call history).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Seeded permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        self.shuffle(&mut perm);
        perm
    }
}

/// Derives an independent stream seed from a master seed, a textual tag and
/// an index. Tags keep the phases of the experiment protocol (splits, inits,
/// epoch permutations, ...) on non-overlapping streams.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag bytes, then one SplitMix64 scramble of the mix.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in tag.as_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mix = master ^ h.rotate_left(17) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    SplitMix64::new(mix).next_u64()
}
