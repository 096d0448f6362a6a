//! Seeded counter-based generator.
//!
//! The `k`-th draw (1-based) of a generator with seed `s` is
//! `mix(s + k * 0x9E3779B97F4A7C15)` with wrapping arithmetic, where `mix`
//! is the SplitMix64 finaliser:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! This is bit-for-bit the SplitMix64 stream. Test vectors (seed 1234567):
//! `6457827717110365317, 3203168211198807973, 9817491932198370423`.
//!
//! Derived values:
//! - `uniform()`: `(x >> 11) * 2^-53`, in `[0, 1)`.
//! - `normal()`: Box-Muller cosine branch on two consecutive uniforms
//!   `u1, u2`, as `sqrt(-2 ln(1 - u1)) * cos(2π u2)`.
//! - `below(n)`: `(x * n) >> 64` on 128-bit integers.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Independent stream for a labelled purpose, derived from a base seed.
    pub fn derive(seed: u64, label: u64) -> Self {
        Rng::new(mix(seed ^ mix(label.wrapping_add(GOLDEN))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Random access into the stream; does not advance the generator.
    pub fn at(&self, k: u64) -> u64 {
        mix(self.seed.wrapping_add(k.wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        self.at(self.counter)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle, swapping from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
