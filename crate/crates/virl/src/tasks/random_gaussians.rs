//! Randomly generated 2-d Gaussian-mixture targets.
//!
//! A task instance is a mixture with `m` components drawn deterministically
//! from a seed: means uniform in a centered box, covariances built from
//! log-uniform eigenvalues and a random rotation (so the condition number is
//! bounded by `eig_max / eig_min`), and weights from symmetric Gamma draws
//! normalized in log space. Rebuilding from the same spec and seed is
//! bit-exact, which is what makes experiment manifests reproducible.

use ndarray::{array, Array1, ArrayView1};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::mixture::Mixture;
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const DEFAULT_MEAN_HALFWIDTH: f64 = 5.0;
pub const DEFAULT_EIG_MIN: f64 = 0.05;
pub const DEFAULT_EIG_MAX: f64 = 0.5;
/// Gamma shape of the weight draws; 2 keeps every component non-negligible
/// at the mixture sizes used here.
pub const DEFAULT_WEIGHT_SHAPE: f64 = 2.0;

/// Dedicated stream id so target generation never shares a draw sequence
/// with training or evaluation streams built from the same seed.
const GENERATION_STREAM: u64 = 0x7461_736b;

#[derive(Debug, Clone)]
pub struct RandomGaussiansTask<S: Scalar = f64> {
    m: usize,
    seed: u64,
    mean_halfwidth: f64,
    eig_min: f64,
    eig_max: f64,
    weight_shape: f64,
    target: Mixture<S>,
}

impl<S: Scalar> RandomGaussiansTask<S> {
    pub fn make(m: usize, seed: u64) -> Result<Self> {
        Self::make_with(
            m,
            seed,
            DEFAULT_MEAN_HALFWIDTH,
            DEFAULT_EIG_MIN,
            DEFAULT_EIG_MAX,
            DEFAULT_WEIGHT_SHAPE,
        )
    }

    pub fn make_with(
        m: usize,
        seed: u64,
        mean_halfwidth: f64,
        eig_min: f64,
        eig_max: f64,
        weight_shape: f64,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m", "mixture needs at least one component"));
        }
        if !(mean_halfwidth > 0.0) || !mean_halfwidth.is_finite() {
            return Err(Error::invalid("mean_halfwidth", "must be positive and finite"));
        }
        if !(eig_min > 0.0 && eig_min <= eig_max) || !eig_max.is_finite() {
            return Err(Error::invalid(
                "eigenvalue range",
                "needs 0 < eig_min <= eig_max < inf",
            ));
        }
        if !(weight_shape > 0.0) || !weight_shape.is_finite() {
            return Err(Error::invalid("weight_shape", "must be positive and finite"));
        }

        let mut rng = RngStream::with_stream(seed, GENERATION_STREAM);

        // Weights first, then per-component geometry; the order is part of
        // the reproducibility contract.
        let mut log_w = Array1::zeros(m);
        for i in 0..m {
            let g: S = rng.gamma(weight_shape)?;
            log_w[i] = g.ln();
        }

        let hw = S::of_f64(mean_halfwidth);
        let ln_lo = S::of_f64(eig_min.ln());
        let ln_hi = S::of_f64(eig_max.ln());
        let two_pi = S::of_f64(2.0) * S::PI();
        let mut components = Vec::with_capacity(m);
        for _ in 0..m {
            let mean = array![rng.uniform_in(-hw, hw), rng.uniform_in(-hw, hw)];
            let angle: S = rng.uniform_in(S::zero(), two_pi);
            let e1: S = rng.uniform_in(ln_lo, ln_hi).exp();
            let e2: S = rng.uniform_in(ln_lo, ln_hi).exp();
            let (c, s) = (angle.cos(), angle.sin());
            // Rotation of diag(e1, e2): R diag R^T.
            let cov = array![
                [c * c * e1 + s * s * e2, c * s * (e1 - e2)],
                [c * s * (e1 - e2), s * s * e1 + c * c * e2],
            ];
            components.push(Gaussian::from_covariance(mean, &cov.view())?);
        }

        let target = Mixture::from_log_weights(log_w, components)?;
        Ok(RandomGaussiansTask {
            m,
            seed,
            mean_halfwidth,
            eig_min,
            eig_max,
            weight_shape,
            target,
        })
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_halfwidth(&self) -> f64 {
        self.mean_halfwidth
    }

    pub fn eig_range(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    pub fn weight_shape(&self) -> f64 {
        self.weight_shape
    }

    pub fn target(&self) -> &Mixture<S> {
        &self.target
    }

    /// Mean of the mixture, `sum_i w_i mu_i`; used by sanity checks.
    pub fn target_mean(&self) -> Array1<S> {
        let mut mean = Array1::zeros(2);
        for (lw, g) in self
            .target
            .log_weights()
            .iter()
            .zip(self.target.components())
        {
            mean = mean + g.mean() * lw.exp();
        }
        mean
    }
}

impl<S: Scalar> Density<S> for RandomGaussiansTask<S> {
    fn dim(&self) -> usize {
        2
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        self.target.log_pdf(x)
    }
}
