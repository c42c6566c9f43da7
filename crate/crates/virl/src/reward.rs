//! Cumulative reward bundles and the sampling machinery around them.
//!
//! A recovered reward is the log of a prior density plus a stack of
//! discriminator logits, summed front to back:
//!
//! ```text
//! reward(x) = log prior(x) + logit_1(x) + ... + logit_T(x)
//! ```
//!
//! Each stack entry was trained against negatives from a fusion of the
//! policy at that iteration and a kernel density estimate of the
//! demonstrations, reweighted so the binary cross-entropy it minimized
//! matches the ratio against the then-current reward. The fusion and the
//! self-normalized importance weights live here too, since every method
//! shares them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::density::Density;
use crate::discriminator::{Discriminator, Mode};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::kde::Kde;
use crate::math::logsumexp2;
use crate::mixture::Mixture;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// A density that can also draw samples; everything a fusion side needs.
pub trait DensitySampler<S: Scalar>: Density<S> {
    fn sample_one(&self, rng: &mut RngStream) -> Array1<S>;

    fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        let mut out = Array2::zeros((n, self.dim()));
        for i in 0..n {
            out.row_mut(i).assign(&self.sample_one(rng));
        }
        out
    }
}

impl<S: Scalar> DensitySampler<S> for Gaussian<S> {
    fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        Gaussian::sample_one(self, rng)
    }

    fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        Gaussian::sample(self, rng, n)
    }
}

impl<S: Scalar> DensitySampler<S> for Mixture<S> {
    fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        Mixture::sample_one(self, rng)
    }

    fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        Mixture::sample(self, rng, n)
    }
}

impl<S: Scalar> DensitySampler<S> for Kde<S> {
    fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        Kde::sample_one(self, rng)
    }

    fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        Kde::sample(self, rng, n)
    }
}

impl<S: Scalar, T: DensitySampler<S>> DensitySampler<S> for &T {
    fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        (**self).sample_one(rng)
    }

    fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        (**self).sample(rng, n)
    }
}

/// Equal-weight fusion of two distributions. Used as the negative sampler:
/// the policy side tracks where the model currently puts mass, the
/// demonstration side guarantees coverage of every expert mode.
#[derive(Debug, Clone)]
pub struct Fusion<A, B> {
    a: A,
    b: B,
}

impl<A, B> Fusion<A, B> {
    pub fn new<S: Scalar>(a: A, b: B) -> Result<Self>
    where
        A: DensitySampler<S>,
        B: DensitySampler<S>,
    {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                got: b.dim(),
            });
        }
        Ok(Fusion { a, b })
    }
}

impl<S: Scalar, A: DensitySampler<S>, B: DensitySampler<S>> Density<S> for Fusion<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        let half = S::of_f64(0.5).ln();
        Ok(logsumexp2(
            half + self.a.log_pdf(x)?,
            half + self.b.log_pdf(x)?,
        ))
    }
}

impl<S: Scalar, A: DensitySampler<S>, B: DensitySampler<S>> DensitySampler<S> for Fusion<A, B> {
    fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        if rng.uniform::<S>() < S::of_f64(0.5) {
            self.a.sample_one(rng)
        } else {
            self.b.sample_one(rng)
        }
    }
}

/// Self-normalized importance weights with their effective sample size.
#[derive(Debug, Clone)]
pub struct ImportanceWeights<S: Scalar = f64> {
    weights: Array1<S>,
    ess: S,
}

impl<S: Scalar> ImportanceWeights<S> {
    /// Normalizes `exp(log_ratio)` into weights summing to one. Invariant
    /// under a constant shift of the ratios. Entries of `-inf` (zero
    /// weight) are allowed as long as one entry stays usable.
    pub fn from_log_ratios(log_ratios: &ArrayView1<S>) -> Result<Self> {
        if log_ratios.is_empty() {
            return Err(Error::EmptyInput { what: "log ratios" });
        }
        let mut hi = S::neg_infinity();
        for &r in log_ratios {
            if r.is_nan() || r == S::infinity() {
                return Err(Error::NonFinite {
                    what: "importance log ratio".into(),
                });
            }
            hi = hi.max(r);
        }
        if hi == S::neg_infinity() {
            return Err(Error::DegenerateWeights {
                reason: "all importance weights are zero".into(),
            });
        }
        let mut w = log_ratios.mapv(|r| (r - hi).exp());
        let sum = w.sum();
        w /= sum;
        let ess = S::one() / w.iter().map(|&v| v * v).sum::<S>();
        Ok(ImportanceWeights { weights: w, ess })
    }

    pub fn weights(&self) -> &Array1<S> {
        &self.weights
    }

    pub fn into_weights(self) -> Array1<S> {
        self.weights
    }

    /// `1 / sum(w^2)`: between 1 (one dominant sample) and `len` (uniform).
    pub fn ess(&self) -> S {
        self.ess
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// The density whose log anchors a reward bundle.
#[derive(Debug, Clone)]
pub enum RewardPrior<S: Scalar = f64> {
    Gaussian(Gaussian<S>),
    Mixture(Mixture<S>),
    /// Improper flat prior contributing zero; used by bundles that carry
    /// the whole reward in their stack.
    Flat { dim: usize },
}

impl<S: Scalar> Density<S> for RewardPrior<S> {
    fn dim(&self) -> usize {
        match self {
            RewardPrior::Gaussian(g) => g.dim(),
            RewardPrior::Mixture(m) => m.dim(),
            RewardPrior::Flat { dim } => *dim,
        }
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        match self {
            RewardPrior::Gaussian(g) => g.log_pdf(x),
            RewardPrior::Mixture(m) => m.log_pdf(x),
            RewardPrior::Flat { dim } => {
                if x.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        got: x.len(),
                    });
                }
                Ok(S::zero())
            }
        }
    }
}

/// Prior log-density plus a stack of discriminator logits.
#[derive(Debug, Clone)]
pub struct CumulativeReward<S: Scalar = f64> {
    prior: RewardPrior<S>,
    stack: Vec<Discriminator<S>>,
}

impl<S: Scalar> CumulativeReward<S> {
    pub fn new(prior: RewardPrior<S>) -> Self {
        CumulativeReward {
            prior,
            stack: Vec::new(),
        }
    }

    pub fn prior(&self) -> &RewardPrior<S> {
        &self.prior
    }

    pub fn stack(&self) -> &[Discriminator<S>] {
        &self.stack
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Appends a trained discriminator. It must be frozen (eval mode) so
    /// the reward stays a pure function.
    pub fn push(&mut self, disc: Discriminator<S>) -> Result<()> {
        if disc.mode() != Mode::Eval {
            return Err(Error::WrongMode {
                expected: "eval",
                actual: "train",
            });
        }
        if disc.input_dim() != self.prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.prior.dim(),
                got: disc.input_dim(),
            });
        }
        self.stack.push(disc);
        Ok(())
    }

    /// `log prior(x) + sum of logits`, summed front to back.
    pub fn evaluate(&self, x: &ArrayView1<S>) -> Result<S> {
        let mut total = self.prior.log_pdf(x)?;
        for disc in &self.stack {
            total += disc.forward_logit(x)?;
        }
        Ok(total)
    }

    pub fn evaluate_batch(&self, xs: &ArrayView2<S>) -> Result<Array1<S>> {
        let mut total = self.prior.log_pdf_batch(xs)?;
        for disc in &self.stack {
            total += &disc.logit_batch(xs)?;
        }
        Ok(total)
    }
}

impl<S: Scalar> Density<S> for CumulativeReward<S> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        self.evaluate(x)
    }

    fn log_pdf_batch(&self, xs: &ArrayView2<S>) -> Result<Array1<S>> {
        self.evaluate_batch(xs)
    }
}
