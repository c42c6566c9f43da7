//! Multivariate Gaussian parameterized by its covariance Cholesky factor.
//!
//! Storing the lower factor `L` (with `Sigma = L L^T`) keeps every
//! downstream operation cheap and stable: log-densities need one forward
//! substitution, sampling needs one matrix-vector product, and the
//! normalizer is read off the factor's diagonal. Constructors reject
//! non-positive-definite input instead of propagating NaNs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Gaussian<S: Scalar = f64> {
    mean: Array1<S>,
    chol: Array2<S>,
    /// Cached `-d/2 ln(2 pi) - sum_i ln L_ii`.
    log_norm: S,
}

impl<S: Scalar> Gaussian<S> {
    /// Builds from a mean and a lower Cholesky factor of the covariance.
    pub fn new(mean: Array1<S>, chol: Array2<S>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::EmptyInput { what: "gaussian mean" });
        }
        if chol.nrows() != d || chol.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: chol.nrows().max(chol.ncols()),
            });
        }
        for i in 0..d {
            if !(chol[[i, i]] > S::zero()) || !chol[[i, i]].is_finite() {
                return Err(Error::NotPositiveDefinite {
                    what: "cholesky diagonal",
                });
            }
            for j in (i + 1)..d {
                if chol[[i, j]] != S::zero() {
                    return Err(Error::invalid(
                        "chol",
                        "factor must be lower triangular",
                    ));
                }
            }
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite {
                what: "gaussian mean".into(),
            });
        }
        let log_norm = Self::log_norm_of(&chol.view());
        Ok(Gaussian { mean, chol, log_norm })
    }

    /// Builds from a mean and a full covariance matrix.
    pub fn from_covariance(mean: Array1<S>, cov: &ArrayView2<S>) -> Result<Self> {
        let chol = linalg::cholesky(cov)?;
        Self::new(mean, chol)
    }

    /// Spherical Gaussian `N(mean, var * I)`.
    pub fn isotropic(mean: Array1<S>, var: S) -> Result<Self> {
        if !(var > S::zero()) || !var.is_finite() {
            return Err(Error::invalid("var", "must be positive and finite"));
        }
        let d = mean.len();
        let mut chol = Array2::zeros((d, d));
        let sd = var.sqrt();
        for i in 0..d {
            chol[[i, i]] = sd;
        }
        Self::new(mean, chol)
    }

    /// Standard normal in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        Self::isotropic(Array1::zeros(d), S::one()).expect("unit variance is valid")
    }

    fn log_norm_of(chol: &ArrayView2<S>) -> S {
        let d = S::of_usize(chol.nrows());
        let half = S::of_f64(0.5);
        let two_pi = S::of_f64(2.0) * S::PI();
        -half * d * two_pi.ln() - linalg::half_log_det(chol)
    }

    pub fn mean(&self) -> &Array1<S> {
        &self.mean
    }

    pub fn chol(&self) -> &Array2<S> {
        &self.chol
    }

    pub fn covariance(&self) -> Array2<S> {
        linalg::lower_times_transpose(&self.chol.view())
    }

    pub fn precision(&self) -> Array2<S> {
        linalg::spd_inverse(&self.chol.view())
    }

    /// Same mean, covariance multiplied by `factor`.
    pub fn scaled_covariance(&self, factor: S) -> Result<Self> {
        if !(factor > S::zero()) {
            return Err(Error::invalid("factor", "must be positive"));
        }
        Self::new(self.mean.clone(), &self.chol * factor.sqrt())
    }

    pub fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        let z = rng.normal_vector::<S>(self.dim());
        &self.mean + &self.chol.dot(&z)
    }

    /// `n` rows of samples.
    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            row.assign(&self.sample_one(rng));
        }
        out
    }

    /// `KL(self || other)` in nats, closed form.
    pub fn kl(&self, other: &Gaussian<S>) -> Result<S> {
        let d = self.dim();
        if other.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: other.dim(),
            });
        }
        let half = S::of_f64(0.5);
        // tr(S1^-1 S0) = ||L1^-1 L0||_F^2, column by column.
        let mut trace = S::zero();
        for j in 0..d {
            let col = self.chol.column(j).to_owned();
            let y = linalg::solve_lower(&other.chol.view(), &col.view());
            trace += y.iter().map(|&v| v * v).sum::<S>();
        }
        let diff = &other.mean - &self.mean;
        let w = linalg::solve_lower(&other.chol.view(), &diff.view());
        let maha: S = w.iter().map(|&v| v * v).sum();
        let log_det_ratio = linalg::half_log_det(&other.chol.view())
            - linalg::half_log_det(&self.chol.view());
        Ok(half * (trace + maha - S::of_usize(d)) + log_det_ratio)
    }

    pub fn entropy(&self) -> S {
        let d = S::of_usize(self.dim());
        let half = S::of_f64(0.5);
        let two_pi_e = S::of_f64(2.0) * S::PI() * S::E();
        half * d * two_pi_e.ln() + linalg::half_log_det(&self.chol.view())
    }
}

impl<S: Scalar> Density<S> for Gaussian<S> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let diff = x - &self.mean;
        let y = linalg::solve_lower(&self.chol.view(), &diff.view());
        let maha: S = y.iter().map(|&v| v * v).sum();
        Ok(self.log_norm - S::of_f64(0.5) * maha)
    }
}
