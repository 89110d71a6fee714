//! Counter-based deterministic random number generation.
//!
//! Every stream is a pure function of (seed, counter), so replicate r can use
//! seed `base_seed ⊕ r` and draws are reproducible independently of evaluation
//! order or thread count.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer applied to `seed + counter * GOLDEN`.
#[inline]
pub fn mix64(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_mul(GOLDEN)).wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a list of indices
/// (replicate number, sample size, ...). Used to key per-task streams.
pub fn derive_seed(base: u64, indices: &[u64]) -> u64 {
    let mut s = mix64(base, 0x5EED);
    for (k, &ix) in indices.iter().enumerate() {
        s = mix64(s ^ ix.wrapping_mul(GOLDEN), k as u64 + 1);
    }
    s
}

/// Stateful view over the counter-based stream.
#[derive(Clone, Debug)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
    spare_gaussian: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { seed, counter: 0, spare_gaussian: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(self.seed, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on [0, 1) with 53-bit resolution.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [-1, 1].
    #[inline]
    pub fn next_symmetric(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }

    /// Standard Gaussian via Box-Muller (pairs are cached).
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare_gaussian.take() {
            return g;
        }
        loop {
            let u1 = self.next_unit();
            let u2 = self.next_unit();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            self.spare_gaussian = Some(r * s);
            return r * c;
        }
    }

    /// Stream position in scalars drawn (gaussian pairs count as two uniforms).
    pub fn position(&self) -> u64 {
        self.counter
    }

    pub fn skip(&mut self, count: u64) {
        self.counter += count;
    }
}
