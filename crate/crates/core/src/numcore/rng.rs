//! Deterministic random number generation.
//!
//! Everything stochastic in this crate (weight init, world simulation,
//! batch sampling) draws from [`Rng`], a xoshiro256++ generator seeded
//! through splitmix64. The generator is implemented here rather than pulled
//! from a crate so the stream is pinned by this repository: identical seeds
//! produce identical artifacts across builds and dependency upgrades.

/// xoshiro256++ with splitmix64 seeding.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rng {
    state: [u64; 4],
}

impl Rng {
    /// Creates a generator from a 64-bit seed.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut state = [0u64; 4];
        for slot in &mut state {
            *slot = splitmix64(&mut sm);
        }
        Rng { state }
    }

    /// Restores a generator from a previously captured state.
    pub fn from_state(state: [u64; 4]) -> Self {
        Rng { state }
    }

    /// Captures the internal state for checkpointing.
    pub fn state(&self) -> [u64; 4] {
        self.state
    }

    /// Next raw 64-bit value.
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0, "below(0)");
        // Modulo bias is < 2^-53 for the n used here (desk-scale counts).
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        // uniform() can return 0; shift into (0, 1] for the log.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal with the given mean and standard deviation.
    pub fn normal_with(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    /// Poisson count via Knuth's product method; fine for the small rates
    /// used by the simulator.
    pub fn poisson(&mut self, lambda: f64) -> usize {
        debug_assert!(lambda >= 0.0, "poisson rate must be non-negative");
        if lambda == 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0usize;
        let mut p = 1.0;
        loop {
            p *= self.uniform();
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }

    /// Beta(alpha, beta) for small integer parameters, sampled as an order
    /// statistic: the alpha-th smallest of alpha+beta-1 uniforms.
    pub fn beta_int(&mut self, alpha: usize, beta: usize) -> f64 {
        debug_assert!(alpha >= 1 && beta >= 1);
        let n = alpha + beta - 1;
        let mut draws: Vec<f64> = (0..n).map(|_| self.uniform()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        draws[alpha - 1]
    }

    /// Derives an independent child generator; used to give each scenario
    /// or worker its own stream from one root seed.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
