//! Shared interface for everything that can score points in log space.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::Result;
use crate::scalar::Scalar;

/// A (possibly unnormalized) log-density over `R^dim`.
pub trait Density<S: Scalar> {
    fn dim(&self) -> usize;

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S>;

    /// Scores each row of `xs`. The default delegates row by row; types with
    /// a cheaper vectorized path override it.
    fn log_pdf_batch(&self, xs: &ArrayView2<S>) -> Result<Array1<S>> {
        let mut out = Array1::zeros(xs.nrows());
        for (i, row) in xs.rows().into_iter().enumerate() {
            out[i] = self.log_pdf(&row)?;
        }
        Ok(out)
    }
}

impl<S: Scalar, T: Density<S> + ?Sized> Density<S> for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        (**self).log_pdf(x)
    }

    fn log_pdf_batch(&self, xs: &ArrayView2<S>) -> Result<Array1<S>> {
        (**self).log_pdf_batch(xs)
    }
}
