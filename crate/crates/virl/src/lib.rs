//! Inverse reinforcement learning with cumulative density-ratio rewards.
//!
//! The library recovers a reward function from demonstrations as the log of
//! a prior density plus a stack of discriminator logits, each trained to
//! tell expert samples from importance-weighted samples of a fusion of the
//! current policy and a kernel density estimate of the demonstrations. It
//! also ships two baselines sharing the same machinery (a single persistent
//! reward network, and a plain density-ratio imitation loop), two synthetic
//! benchmark tasks, a trust-region Gaussian mixture policy optimizer, an
//! elliptical slice sampler for generating demonstrations, and the
//! evaluation protocol used to compare methods.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases at the crate root pick the default precision used by the
//! experiment drivers.

pub mod config;
pub mod density;
pub mod discriminator;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod gaussian;
pub mod io;
pub mod kde;
pub mod linalg;
pub mod math;
pub mod methods;
pub mod mixture;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod scalar;
pub mod tasks;

pub use density::Density;
pub use error::{Error, Result};
pub use rng::RngStream;
pub use scalar::Scalar;

/// Default-precision aliases. The experiment drivers run at `f64`; the
/// parallel `f32` instantiations exist for callers that want them.
pub type Gaussian64 = gaussian::Gaussian<f64>;
pub type Gaussian32 = gaussian::Gaussian<f32>;
pub type Mixture64 = mixture::Mixture<f64>;
pub type Mixture32 = mixture::Mixture<f32>;
pub type Kde64 = kde::Kde<f64>;
pub type Kde32 = kde::Kde<f32>;
pub type Discriminator64 = discriminator::Discriminator<f64>;
pub type Discriminator32 = discriminator::Discriminator<f32>;
