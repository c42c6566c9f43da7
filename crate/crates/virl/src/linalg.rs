//! Small dense symmetric positive definite helpers.
//!
//! Covariances here are tiny (task dimension, at most a handful), so plain
//! loop Cholesky factorizations and triangular substitutions are all the
//! linear algebra the crate needs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<S: Scalar>(a: &ArrayView2<S>) -> Result<Array2<S>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum = sum - l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= S::zero() || !sum.is_finite() {
                    return Err(Error::NotPositiveDefinite {
                        what: "cholesky pivot",
                    });
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower triangular `L` by forward substitution.
pub fn solve_lower<S: Scalar>(l: &ArrayView2<S>, b: &ArrayView1<S>) -> Array1<S> {
    let n = l.nrows();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[[i, k]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solves `L^T x = b` for lower triangular `L` by back substitution.
pub fn solve_lower_transpose<S: Scalar>(l: &ArrayView2<S>, b: &ArrayView1<S>) -> Array1<S> {
    let n = l.nrows();
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum = sum - l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solves `A x = b` given the lower Cholesky factor of `A`.
pub fn spd_solve<S: Scalar>(l: &ArrayView2<S>, b: &ArrayView1<S>) -> Array1<S> {
    let y = solve_lower(l, b);
    solve_lower_transpose(l, &y.view())
}

/// Inverse of an SPD matrix from its lower Cholesky factor.
pub fn spd_inverse<S: Scalar>(l: &ArrayView2<S>) -> Array2<S> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    let mut e = Array1::zeros(n);
    for j in 0..n {
        e.fill(S::zero());
        e[j] = S::one();
        let col = spd_solve(l, &e.view());
        inv.column_mut(j).assign(&col);
    }
    // Symmetrize against round-off so downstream factorizations stay stable.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (inv[[i, j]] + inv[[j, i]]) / S::of_f64(2.0);
            inv[[i, j]] = avg;
            inv[[j, i]] = avg;
        }
    }
    inv
}

/// `sum_i ln L_ii`, i.e. half the log-determinant of `L L^T`.
pub fn half_log_det<S: Scalar>(l: &ArrayView2<S>) -> S {
    (0..l.nrows()).map(|i| l[[i, i]].ln()).sum()
}

/// Reconstructs `L L^T`.
pub fn lower_times_transpose<S: Scalar>(l: &ArrayView2<S>) -> Array2<S> {
    let n = l.nrows();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let upto = i.min(j) + 1;
            let mut sum = S::zero();
            for k in 0..upto {
                sum = sum + l[[i, k]] * l[[j, k]];
            }
            a[[i, j]] = sum;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const TOLERANCE: f64 = 1e-10;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn factor_round_trips() {
        let a = array![[4.0, 1.2, 0.4], [1.2, 3.0, -0.5], [0.4, -0.5, 2.0]];
        let l = cholesky(&a.view()).unwrap();
        let back = lower_times_transpose(&l.view());
        assert!(max_abs_diff(&a, &back) < TOLERANCE);
    }

    #[test]
    fn rejects_indefinite_input() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            cholesky(&a.view()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn triangular_solves_invert_the_factor() {
        let a: Array2<f64> = array![[2.0, 0.3], [0.3, 1.5]];
        let l = cholesky(&a.view()).unwrap();
        let b: Array1<f64> = array![1.0, -2.0];
        let x = spd_solve(&l.view(), &b.view());
        let ax = a.dot(&x);
        for i in 0..2 {
            assert!((ax[i] - b[i]).abs() < TOLERANCE);
        }
    }

    #[test]
    fn inverse_matches_solve() {
        let a = array![[3.0, 0.9, 0.1], [0.9, 2.0, -0.2], [0.1, -0.2, 1.0]];
        let l = cholesky(&a.view()).unwrap();
        let inv = spd_inverse(&l.view());
        let prod = a.dot(&inv);
        let eye = Array2::<f64>::eye(3);
        assert!(max_abs_diff(&prod, &eye) < 1e-9);
    }

    #[test]
    fn half_log_det_matches_determinant() {
        let a: Array2<f64> = array![[2.0, 0.5], [0.5, 1.25]];
        let l = cholesky(&a.view()).unwrap();
        let det: f64 = 2.0 * 1.25 - 0.25;
        assert!((2.0 * half_log_det(&l.view()) - det.ln()).abs() < TOLERANCE);
    }
}
