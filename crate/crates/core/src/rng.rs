//! Deterministic pseudo-random generator (splitmix64).
//!
//! The noise spotter and the synthetic map generator must produce identical
//! streams for a fixed seed on every platform and for any worker count, so
//! they use this fixed-algorithm generator instead of an external RNG crate
//! whose stream may change between versions.

#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn range_usize(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform integer in [lo, hi] (inclusive).
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "empty range");
        lo + (self.next_u64() % ((hi - lo) as u64 + 1)) as i64
    }

    /// Uniform in [-bound, bound].
    pub fn jitter(&mut self, bound: f64) -> f64 {
        (self.next_f64() * 2.0 - 1.0) * bound
    }
}

/// Folds several values into one seed, so sub-streams (per window, per label)
/// are independent of processing order.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x517C_C1B7_2722_0A95u64;
    for &p in parts {
        let mut r = DetRng::new(acc ^ p);
        acc = r.next_u64();
    }
    acc
}
