//! Elliptical slice sampling.
//!
//! Draws from a target proportional to `exp(log_density)`. The supplied
//! Gaussian prior must be a factor of that target (the sampler treats
//! `log_density - prior.log_pdf` as the likelihood); each step mixes the
//! current state with fresh prior noise on an ellipse and shrinks the angle
//! bracket until the slice threshold is met, so every step moves without a
//! rejection rate to tune.

use ndarray::{Array2, ArrayView1};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Hard cap on bracket shrinks per step; continuity makes the bracket close
/// on the current state long before this, so hitting it means the target
/// returned NaN somewhere. The step then keeps the current state.
const MAX_SHRINKS: usize = 1000;

/// Runs one chain and returns `m` thinned states after `burn_in` steps.
///
/// `log_density` is the full (possibly unnormalized) target log-density and
/// must be finite at the prior mean, where the chain starts.
pub fn ess_sample<S: Scalar>(
    log_density: &dyn Fn(&ArrayView1<S>) -> Result<S>,
    prior: &Gaussian<S>,
    rng: &mut RngStream,
    m: usize,
    burn_in: usize,
    thinning: usize,
) -> Result<Array2<S>> {
    if m == 0 {
        return Err(Error::EmptyInput {
            what: "sample count",
        });
    }
    if thinning == 0 {
        return Err(Error::invalid("thinning", "must be at least 1"));
    }
    let d = prior.dim();
    let mean = prior.mean().clone();
    let loglik = |p: &ArrayView1<S>| -> Result<S> { Ok(log_density(p)? - prior.log_pdf(p)?) };

    let mut x = mean.clone();
    let mut ll = loglik(&x.view())?;
    if !ll.is_finite() {
        return Err(Error::NonFinite {
            what: "target log-density at the prior mean".into(),
        });
    }

    let two_pi = S::of_f64(2.0) * S::PI();
    let mut out = Array2::zeros((m, d));
    let mut taken = 0;
    let total = burn_in + m * thinning;
    for step in 0..total {
        let nu = prior.sample_one(rng) - &mean;
        let u: S = rng.uniform();
        let log_y = ll + u.ln();
        let mut theta = rng.uniform_in(S::zero(), two_pi);
        let mut lo = theta - two_pi;
        let mut hi = theta;
        for _ in 0..MAX_SHRINKS {
            let candidate = (&x - &mean) * theta.cos() + &nu * theta.sin() + &mean;
            let cand_ll = loglik(&candidate.view())?;
            if cand_ll > log_y {
                x = candidate;
                ll = cand_ll;
                break;
            }
            if theta < S::zero() {
                lo = theta;
            } else {
                hi = theta;
            }
            theta = rng.uniform_in(lo, hi);
        }
        if step >= burn_in && (step - burn_in + 1) % thinning == 0 {
            out.row_mut(taken).assign(&x);
            taken += 1;
        }
    }
    debug_assert_eq!(taken, m);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn empirical_mean_cov(xs: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let n = xs.nrows() as f64;
        let d = xs.ncols();
        let mean = xs.sum_axis(ndarray::Axis(0)) / n;
        let mut cov = Array2::zeros((d, d));
        for row in xs.rows() {
            let diff = &row - &mean;
            for i in 0..d {
                for j in 0..d {
                    cov[[i, j]] += diff[i] * diff[j];
                }
            }
        }
        (mean, cov / (n - 1.0))
    }

    #[test]
    fn flat_likelihood_reproduces_the_prior() {
        let cov = array![[0.5, 0.0], [0.0, 2.0]];
        let prior = Gaussian::from_covariance(array![1.0, -2.0], &cov.view()).unwrap();
        let p = prior.clone();
        let target = move |x: &ArrayView1<f64>| p.log_pdf(x);
        let mut rng = RngStream::new(17);
        let draws = ess_sample(&target, &prior, &mut rng, 10_000, 200, 2).unwrap();
        let (mean, est) = empirical_mean_cov(&draws);
        assert!((mean[0] - 1.0).abs() < 0.08, "mean {mean}");
        assert!((mean[1] + 2.0).abs() < 0.12, "mean {mean}");
        assert!((est[[0, 0]] - 0.5).abs() < 0.05, "cov {est}");
        assert!((est[[1, 1]] - 2.0).abs() < 0.2, "cov {est}");
        assert!(est[[0, 1]].abs() < 0.06, "cov {est}");
    }

    #[test]
    fn conjugate_pair_matches_the_analytic_posterior() {
        // Prior N(0, I), Gaussian likelihood centered at (1, 0.5) with
        // covariance I/2: posterior is N((2/3, 1/3), I/3).
        let prior = Gaussian::<f64>::standard(2);
        let lik = Gaussian::isotropic(array![1.0, 0.5], 0.5).unwrap();
        let pr = prior.clone();
        let target = move |x: &ArrayView1<f64>| Ok(pr.log_pdf(x)? + lik.log_pdf(x)?);
        let mut rng = RngStream::new(23);
        let draws = ess_sample(&target, &prior, &mut rng, 6_000, 200, 3).unwrap();
        let (mean, est) = empirical_mean_cov(&draws);
        assert!((mean[0] - 2.0 / 3.0).abs() < 0.05, "mean {mean}");
        assert!((mean[1] - 1.0 / 3.0).abs() < 0.05, "mean {mean}");
        let third = 1.0 / 3.0;
        let frob_err = ((est[[0, 0]] - third).powi(2)
            + (est[[1, 1]] - third).powi(2)
            + 2.0 * est[[0, 1]].powi(2))
        .sqrt();
        let frob_true = (2.0 * third * third).sqrt();
        assert!(frob_err / frob_true < 0.1, "relative error {}", frob_err / frob_true);
    }

    #[test]
    fn rejects_empty_requests_and_bad_initialization() {
        let prior = Gaussian::<f64>::standard(1);
        let flat = |_: &ArrayView1<f64>| Ok(0.0);
        let mut rng = RngStream::new(1);
        assert!(ess_sample(&flat, &prior, &mut rng, 0, 10, 1).is_err());
        assert!(ess_sample(&flat, &prior, &mut rng, 5, 10, 0).is_err());
        // -inf at the prior mean cannot seed the chain.
        let hole = |x: &ArrayView1<f64>| Ok(x[0].abs().ln());
        assert!(ess_sample(&hole, &prior, &mut rng, 5, 10, 1).is_err());
    }

    #[test]
    fn identical_streams_reproduce_draws_bit_for_bit() {
        let prior = Gaussian::<f64>::standard(2);
        let p = prior.clone();
        let target = move |x: &ArrayView1<f64>| p.log_pdf(x);
        let mut a = RngStream::new(40).substream(2);
        let mut b = RngStream::new(40).substream(2);
        let da = ess_sample(&target, &prior, &mut a, 50, 20, 2).unwrap();
        let db = ess_sample(&target, &prior, &mut b, 50, 20, 2).unwrap();
        for (x, y) in da.iter().zip(db.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
