//! Shared helpers for integration tests.

/// Small deterministic generator so tests don't depend on crate internals.
/// (SplitMix64-style mixing; any fixed stream works here.)
pub struct TestRng {
    state: u64,
}

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [-1, 1).
    pub fn signed_unit(&mut self) -> f64 {
        self.unit() * 2.0 - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn vector(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.signed_unit()).collect()
    }

    /// Random lowercase ascii text of length 1..=max_len.
    pub fn text(&mut self, max_len: usize) -> String {
        let len = 1 + self.below(max_len);
        (0..len)
            .map(|_| {
                let c = self.below(27);
                if c == 26 {
                    ' '
                } else {
                    (b'a' + c as u8) as char
                }
            })
            .collect()
    }
}
