//! Gaussian mixtures with log-space weights.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::math::logsumexp;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Finite mixture of Gaussians. Weights are stored in log space and
/// normalized at construction, so `logsumexp(log_weights) == 0` always
/// holds afterwards (a component may carry zero weight, i.e. `-inf`).
#[derive(Debug, Clone)]
pub struct Mixture<S: Scalar = f64> {
    log_weights: Array1<S>,
    components: Vec<Gaussian<S>>,
}

impl<S: Scalar> Mixture<S> {
    /// Builds from linear-space weights (any positive scale).
    pub fn new(weights: &[S], components: Vec<Gaussian<S>>) -> Result<Self> {
        if weights.iter().any(|w| *w < S::zero() || !w.is_finite()) {
            return Err(Error::invalid(
                "weights",
                "must be finite and non-negative",
            ));
        }
        let log_w: Vec<S> = weights.iter().map(|w| w.ln()).collect();
        Self::from_log_weights(Array1::from(log_w), components)
    }

    /// Builds from unnormalized log weights.
    pub fn from_log_weights(
        mut log_weights: Array1<S>,
        components: Vec<Gaussian<S>>,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput {
                what: "mixture components",
            });
        }
        if log_weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: log_weights.len(),
            });
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::invalid(
                "components",
                "all components must share one dimension",
            ));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == S::infinity()) {
            return Err(Error::invalid("weights", "log weight is NaN or +inf"));
        }
        let lw: Vec<S> = log_weights.to_vec();
        let total = logsumexp(&lw)?;
        if !total.is_finite() {
            return Err(Error::invalid("weights", "total weight is zero"));
        }
        log_weights.mapv_inplace(|w| w - total);
        Ok(Mixture {
            log_weights,
            components,
        })
    }

    /// Rebuilds from already-normalized log weights without renormalizing,
    /// so serialization round trips preserve bits. Rejects weights whose
    /// logsumexp strays more than 1e-9 from zero.
    pub fn from_normalized_log_weights(
        log_weights: Array1<S>,
        components: Vec<Gaussian<S>>,
    ) -> Result<Self> {
        let total = logsumexp(&log_weights.to_vec())?;
        if !(total.abs() <= S::of_f64(1e-9)) {
            return Err(Error::invalid(
                "weights",
                "log weights must already be normalized",
            ));
        }
        let mut m = Self::from_log_weights(log_weights.clone(), components)?;
        m.log_weights = log_weights;
        Ok(m)
    }

    /// Single-component mixture.
    pub fn single(g: Gaussian<S>) -> Self {
        Mixture {
            log_weights: Array1::zeros(1),
            components: vec![g],
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn log_weights(&self) -> &Array1<S> {
        &self.log_weights
    }

    pub fn weights(&self) -> Array1<S> {
        self.log_weights.mapv(|w| w.exp())
    }

    pub fn component(&self, i: usize) -> &Gaussian<S> {
        &self.components[i]
    }

    pub fn components(&self) -> &[Gaussian<S>] {
        &self.components
    }

    /// Replaces component `i`, keeping weights.
    pub fn set_component(&mut self, i: usize, g: Gaussian<S>) -> Result<()> {
        if g.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: g.dim(),
            });
        }
        self.components[i] = g;
        Ok(())
    }

    /// Replaces the weights with normalized `exp(log_weights)`.
    pub fn set_log_weights(&mut self, log_weights: Array1<S>) -> Result<()> {
        let refreshed = Self::from_log_weights(log_weights, self.components.clone())?;
        self.log_weights = refreshed.log_weights;
        Ok(())
    }

    /// Draws one sample: categorical over weights, then the component.
    pub fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        let z = self.sample_index(rng);
        self.components[z].sample_one(rng)
    }

    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            row.assign(&self.sample_one(rng));
        }
        out
    }

    /// Categorical draw over the mixture weights.
    pub fn sample_index(&self, rng: &mut RngStream) -> usize {
        let u: S = rng.uniform();
        let mut acc = S::zero();
        for (i, lw) in self.log_weights.iter().enumerate() {
            acc += lw.exp();
            if u < acc {
                return i;
            }
        }
        self.len() - 1
    }
}

impl<S: Scalar> Density<S> for Mixture<S> {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        let mut terms = Vec::with_capacity(self.len());
        for (lw, c) in self.log_weights.iter().zip(&self.components) {
            if *lw == S::neg_infinity() {
                terms.push(S::neg_infinity());
            } else {
                terms.push(*lw + c.log_pdf(x)?);
            }
        }
        logsumexp(&terms)
    }

    fn log_pdf_batch(&self, xs: &ArrayView2<S>) -> Result<Array1<S>> {
        let n = xs.nrows();
        // One pass per component over the batch keeps the inner loops tight.
        let mut per_comp: Vec<Array1<S>> = Vec::with_capacity(self.len());
        for (lw, c) in self.log_weights.iter().zip(&self.components) {
            if *lw == S::neg_infinity() {
                per_comp.push(Array1::from_elem(n, S::neg_infinity()));
            } else {
                let mut vals = c.log_pdf_batch(xs)?;
                vals.mapv_inplace(|v| v + *lw);
                per_comp.push(vals);
            }
        }
        let mut out = Array1::zeros(n);
        let mut terms = vec![S::zero(); self.len()];
        for i in 0..n {
            for (k, vals) in per_comp.iter().enumerate() {
                terms[k] = vals[i];
            }
            out[i] = logsumexp(&terms)?;
        }
        Ok(out)
    }
}
