//! Isotropic Gaussian kernel density estimate over a sample set.
//!
//! One scalar bandwidth is shared by every kernel and coordinate. The
//! default bandwidth follows Silverman's rule with the mean per-coordinate
//! sample standard deviation standing in for the scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::math::{logsumexp, sample_variance};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Kde<S: Scalar = f64> {
    points: Array2<S>,
    bandwidth: S,
    /// `-d/2 ln(2 pi h^2) - ln N`, shared by every kernel evaluation.
    log_norm: S,
}

/// Silverman's rule: `(4 / (d + 2))^(1/(d+4)) * N^(-1/(d+4)) * sigma_bar`
/// where `sigma_bar` is the mean per-coordinate sample standard deviation.
/// Needs at least two points.
pub fn silverman_bandwidth<S: Scalar>(points: &ArrayView2<S>) -> Result<S> {
    let (n, d) = (points.nrows(), points.ncols());
    if n < 2 {
        return Err(Error::invalid(
            "points",
            "silverman bandwidth needs at least two points",
        ));
    }
    let mut sigma_sum = S::zero();
    for j in 0..d {
        let col: Vec<S> = points.column(j).to_vec();
        sigma_sum += sample_variance(&col).sqrt();
    }
    let sigma_bar = sigma_sum / S::of_usize(d);
    if !(sigma_bar > S::zero()) {
        return Err(Error::invalid(
            "points",
            "degenerate sample spread, bandwidth would be zero",
        ));
    }
    let df = S::of_usize(d);
    let exponent = S::one() / (df + S::of_f64(4.0));
    let shape = (S::of_f64(4.0) / (df + S::of_f64(2.0))).powf(exponent);
    let decay = S::of_usize(n).powf(-exponent);
    Ok(shape * decay * sigma_bar)
}

impl<S: Scalar> Kde<S> {
    pub fn new(points: Array2<S>, bandwidth: S) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::EmptyInput { what: "kde points" });
        }
        if !(bandwidth > S::zero()) || !bandwidth.is_finite() {
            return Err(Error::invalid("bandwidth", "must be positive and finite"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "kde support point".into(),
            });
        }
        let d = S::of_usize(points.ncols());
        let half = S::of_f64(0.5);
        let two_pi_h2 = S::of_f64(2.0) * S::PI() * bandwidth * bandwidth;
        let log_norm = -half * d * two_pi_h2.ln() - S::of_usize(points.nrows()).ln();
        Ok(Kde {
            points,
            bandwidth,
            log_norm,
        })
    }

    /// Fits with the Silverman bandwidth.
    pub fn with_silverman(points: Array2<S>) -> Result<Self> {
        let bw = silverman_bandwidth(&points.view())?;
        Self::new(points, bw)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bandwidth(&self) -> S {
        self.bandwidth
    }

    pub fn points(&self) -> &Array2<S> {
        &self.points
    }

    /// Smoothed bootstrap draw: a uniformly chosen support point plus
    /// bandwidth-scaled Gaussian noise.
    pub fn sample_one(&self, rng: &mut RngStream) -> Array1<S> {
        let i = rng.index(self.len());
        let noise = rng.normal_vector::<S>(self.dim());
        &self.points.row(i) + &(noise * self.bandwidth)
    }

    pub fn sample(&self, rng: &mut RngStream, n: usize) -> Array2<S> {
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            row.assign(&self.sample_one(rng));
        }
        out
    }
}

impl<S: Scalar> Density<S> for Kde<S> {
    fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let inv_two_h2 = S::of_f64(0.5) / (self.bandwidth * self.bandwidth);
        let mut terms = Vec::with_capacity(self.len());
        for p in self.points.rows() {
            let mut sq = S::zero();
            for (a, b) in x.iter().zip(p.iter()) {
                let dlt = *a - *b;
                sq += dlt * dlt;
            }
            terms.push(-sq * inv_two_h2);
        }
        Ok(self.log_norm + logsumexp(&terms)?)
    }
}
