//! Deterministic random streams.
//!
//! Every stochastic routine in the crate draws from an explicit
//! [`RngStream`]. A stream is identified by `(seed, stream)`; the same pair
//! always reproduces the same draw sequence bit for bit, on every platform.
//! Concurrent work (trials, chains) runs on distinct substreams derived from
//! stable ids, never on shared state.

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Counter-based deterministic RNG.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

/// SplitMix64 finalizer; used to derive child stream ids.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    /// Independent child stream. Children of distinct ids, and children at
    /// distinct depths, never share a ChaCha stream in practice (ids are
    /// mixed through SplitMix64; this is a determinism tool, not crypto).
    pub fn substream(&self, id: u64) -> Self {
        Self::with_stream(self.seed, mix(self.stream ^ mix(id.wrapping_add(1))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform<S: Scalar>(&mut self) -> S {
        S::of_f64(self.rng.gen::<f64>())
    }

    pub fn uniform_in<S: Scalar>(&mut self, lo: S, hi: S) -> S {
        lo + (hi - lo) * self.uniform::<S>()
    }

    /// Standard normal draw.
    pub fn normal<S: Scalar>(&mut self) -> S {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        S::of_f64(z)
    }

    /// `n x d` matrix of standard normal draws, row major.
    pub fn normal_matrix<S: Scalar>(&mut self, n: usize, d: usize) -> Array2<S> {
        Array2::from_shape_simple_fn((n, d), || self.normal())
    }

    pub fn normal_vector<S: Scalar>(&mut self, d: usize) -> Array1<S> {
        Array1::from_shape_simple_fn(d, || self.normal())
    }

    /// Gamma(shape, 1) draw, used for Dirichlet-style weight generation.
    pub fn gamma<S: Scalar>(&mut self, shape: f64) -> Result<S> {
        let g = Gamma::new(shape, 1.0)
            .map_err(|e| Error::invalid("gamma shape", e.to_string()))?;
        Ok(S::of_f64(g.sample(&mut self.rng)))
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.rng.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            xs.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
