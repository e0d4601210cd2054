//! Deterministic 64-bit generator used for parameter initialization and
//! split shuffling.
//!
//! SplitMix64-style: increment 0x9E3779B97F4A7C15, multipliers
//! 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB, xor-shifts 31/27/31. The
//! sequence is part of the reproducibility contract: identical seeds yield
//! identical streams on every platform.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform below `n`. Modulo bias is irrelevant for shuffling here;
    /// determinism is the contract.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// In-place Fisher-Yates shuffle with a fixed visit order.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_zero_first_outputs() {
        // Frozen by hand-evaluating the documented sequence.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0x58B3_8626_5049_B4EE);
        assert_eq!(rng.next_u64(), 0x2C9B_FDFD_72B2_CEF7);
        assert_eq!(rng.next_u64(), 0x763A_69CB_CAA5_B3DF);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn unit_values_in_range() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..1000 {
            let x = rng.next_unit();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
