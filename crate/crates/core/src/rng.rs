//! Portable 64-bit linear congruential generator.
//!
//! Every random choice in the harness (BRIEF sampling pattern, RANSAC minimal
//! samples, synthetic warps) goes through this generator so that two
//! implementations seeded identically produce identical streams.

const MULTIPLIER: u64 = 6364136223846793005;
const INCREMENT: u64 = 1442695040888963407;

/// `state' = state * 6364136223846793005 + 1442695040888963407 (mod 2^64)`,
/// outputs are the high 32 bits of the advanced state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self
            .state
            .wrapping_mul(MULTIPLIER)
            .wrapping_add(INCREMENT);
        (self.state >> 32) as u32
    }

    /// Uniform in `[0, 1)` with 32 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        f64::from(self.next_u32()) / 4_294_967_296.0
    }

    /// Uniform in the open interval `(0, 1)`.
    fn next_open_f64(&mut self) -> f64 {
        (f64::from(self.next_u32()) + 0.5) / 4_294_967_296.0
    }

    /// Uniform in `[-magnitude, magnitude)`.
    pub fn next_symmetric(&mut self, magnitude: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * magnitude
    }

    /// Uniform integer in `0..n` by rejection sampling (no modulo bias).
    ///
    /// Panics if `n == 0`.
    pub fn next_below(&mut self, n: u32) -> u32 {
        assert!(n > 0, "next_below requires n > 0");
        let span = 1u64 << 32;
        let limit = span - span % u64::from(n);
        loop {
            let v = u64::from(self.next_u32());
            if v < limit {
                return (v % u64::from(n)) as u32;
            }
        }
    }

    /// Standard normal deviate (Box-Muller, one output per two draws).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_open_f64();
        let u2 = self.next_open_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `k` distinct indices from `0..n`, each drawn uniformly and redrawn on
    /// collision. Panics if `k > n`.
    pub fn distinct_indices<const K: usize>(&mut self, n: usize) -> [usize; K] {
        assert!(K <= n, "cannot draw {K} distinct indices from {n}");
        let mut out = [0usize; K];
        let mut filled = 0;
        while filled < K {
            let candidate = self.next_below(n as u32) as usize;
            if !out[..filled].contains(&candidate) {
                out[filled] = candidate;
                filled += 1;
            }
        }
        out
    }
}
