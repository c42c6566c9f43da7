//! Evaluation protocol: divergence estimates, mode coverage, and the
//! across-trial aggregation rule.
//!
//! Divergences are Monte Carlo estimates from policy samples and always
//! carry a standard error. Unnormalized targets need a log-normalizer
//! estimate first; [`estimate_log_normalizer`] provides one by importance
//! sampling from any proposal that covers the target, typically a fusion
//! of the task prior and the demonstration KDE.
//!
//! Per-trial metric traces are summarized by the mean from their minimum
//! to the end, which rewards methods that stay good after converging
//! instead of methods that touch a good value once.

use ndarray::{Array2, ArrayView2};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::math::{logsumexp, mean, standard_error};
use crate::mixture::Mixture;
use crate::reward::DensitySampler;
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;
pub const DEFAULT_NORMALIZER_SAMPLES: usize = 10_000;
pub const DEFAULT_BOX_NEGATIVES: usize = 100;

/// Reverse KL estimates below this are treated as Monte Carlo noise and
/// flagged rather than rejected.
pub const KL_NOISE_FLOOR: f64 = -0.05;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Per-iteration evaluation record.
#[derive(Debug, Clone)]
pub struct MetricSnapshot {
    pub iteration: usize,
    pub reverse_kl: MetricEstimate,
    pub neg_elbo: MetricEstimate,
    pub mode_score: Option<ModeRepresentation>,
    pub effective_sample_size: f64,
    /// Set when the reverse KL came out below [`KL_NOISE_FLOOR`], which a
    /// correct estimator only does through sampling noise.
    pub kl_flagged: bool,
}

impl MetricSnapshot {
    pub fn new(
        iteration: usize,
        reverse_kl: MetricEstimate,
        neg_elbo: MetricEstimate,
        mode_score: Option<ModeRepresentation>,
        effective_sample_size: f64,
    ) -> Self {
        let kl_flagged = reverse_kl.value < KL_NOISE_FLOOR;
        MetricSnapshot {
            iteration,
            reverse_kl,
            neg_elbo,
            mode_score,
            effective_sample_size,
            kl_flagged,
        }
    }
}

/// Self-normalized importance estimate of `log Z` for an unnormalized
/// target: `logsumexp(target - log proposal) - log n`.
pub fn estimate_log_normalizer<S: Scalar, P: DensitySampler<S>>(
    target: &dyn Density<S>,
    proposal: &P,
    n: usize,
    rng: &mut RngStream,
) -> Result<S> {
    if n == 0 {
        return Err(Error::EmptyInput {
            what: "normalizer samples",
        });
    }
    let xs = proposal.sample(rng, n);
    let ratios = target.log_pdf_batch(&xs.view())? - &proposal.log_pdf_batch(&xs.view())?;
    let mut vals = Vec::with_capacity(n);
    for &r in &ratios {
        if r.is_nan() || r == S::infinity() {
            return Err(Error::NonFinite {
                what: "normalizer log ratio".into(),
            });
        }
        vals.push(r);
    }
    Ok(logsumexp(&vals)? - S::of_usize(n).ln())
}

/// `KL(policy || target)` by sampling the policy. `log_z` is the target's
/// log-normalizer (zero for normalized targets).
pub fn reverse_kl<S: Scalar>(
    policy: &Mixture<S>,
    target: &dyn Density<S>,
    log_z: S,
    n: usize,
    rng: &mut RngStream,
) -> Result<MetricEstimate> {
    if n == 0 {
        return Err(Error::EmptyInput { what: "eval samples" });
    }
    let xs = policy.sample(rng, n);
    let lp = policy.log_pdf_batch(&xs.view())?;
    let lt = target.log_pdf_batch(&xs.view())?;
    let mut vals = Vec::with_capacity(n);
    for (&p, &t) in lp.iter().zip(&lt) {
        let v = (p - t + log_z).as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "reverse KL term".into(),
            });
        }
        vals.push(v);
    }
    Ok(MetricEstimate {
        value: mean(&vals),
        stderr: standard_error(&vals),
    })
}

/// Negative evidence lower bound of a recovered reward under the policy:
/// `-E[reward - log policy]`. Equals the reverse KL when the reward is a
/// normalized log-density.
pub fn negative_elbo<S: Scalar>(
    policy: &Mixture<S>,
    reward: &dyn Density<S>,
    n: usize,
    rng: &mut RngStream,
) -> Result<MetricEstimate> {
    reverse_kl(policy, reward, S::zero(), n, rng)
}

/// Normalized scores of a model at mode centers and at background probes.
#[derive(Debug, Clone)]
pub struct ModeRepresentation {
    /// Min-max normalized model score per center, in row order.
    pub scores: Vec<f64>,
    /// Normalized scores of the uniform box draws, same normalization.
    pub negative_scores: Vec<f64>,
    /// Set when the model scored every probe identically, in which case
    /// all scores are reported as one half.
    pub degenerate: bool,
}

impl ModeRepresentation {
    pub fn mean(&self) -> f64 {
        mean(&self.scores)
    }

    pub fn min_center_score(&self) -> f64 {
        self.scores.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Scores the model at every mode center against uniform draws from the
/// evaluation box `[-halfwidth, halfwidth]^d`, min-max normalized over
/// all probes together. High center values mean the modes sit near the
/// top of the model's range; around one half means the model cannot tell
/// modes from background.
pub fn mode_representation<S: Scalar>(
    model: &dyn Density<S>,
    centers: &ArrayView2<S>,
    halfwidth: S,
    negatives: usize,
    rng: &mut RngStream,
) -> Result<ModeRepresentation> {
    let k = centers.nrows();
    if k == 0 {
        return Err(Error::EmptyInput { what: "mode centers" });
    }
    if negatives == 0 {
        return Err(Error::EmptyInput { what: "box negatives" });
    }
    let d = centers.ncols();
    let mut probes = Array2::zeros((k + negatives, d));
    probes.slice_mut(ndarray::s![..k, ..]).assign(centers);
    for i in 0..negatives {
        for j in 0..d {
            probes[[k + i, j]] = rng.uniform_in(-halfwidth, halfwidth);
        }
    }
    let raw = model.log_pdf_batch(&probes.view())?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &raw {
        let v = v.as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "mode representation score".into(),
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    if span < 1e-12 {
        return Ok(ModeRepresentation {
            scores: vec![0.5; k],
            negative_scores: vec![0.5; negatives],
            degenerate: true,
        });
    }
    let norm = |v: S| (v.as_f64() - lo) / span;
    Ok(ModeRepresentation {
        scores: raw.iter().take(k).map(|&v| norm(v)).collect(),
        negative_scores: raw.iter().skip(k).map(|&v| norm(v)).collect(),
        degenerate: false,
    })
}

/// Nearest-rank percentile; `p` in `[0, 100]`. Input order is free.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput { what: "percentile values" });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Marks each center as explored when some policy component mean lies
/// within half the smallest center separation of it.
pub fn explored_modes<S: Scalar>(policy: &Mixture<S>, centers: &ArrayView2<S>) -> Vec<bool> {
    let k = centers.nrows();
    let mut min_sep = S::infinity();
    for a in 0..k {
        for b in (a + 1)..k {
            let mut sq = S::zero();
            for j in 0..centers.ncols() {
                let d = centers[[a, j]] - centers[[b, j]];
                sq += d * d;
            }
            min_sep = min_sep.min(sq.sqrt());
        }
    }
    let radius = if min_sep.is_finite() {
        min_sep / S::of_f64(2.0)
    } else {
        S::infinity()
    };
    (0..k)
        .map(|a| {
            policy.components().iter().any(|c| {
                let mut sq = S::zero();
                for j in 0..centers.ncols() {
                    let d = c.mean()[j] - centers[[a, j]];
                    sq += d * d;
                }
                sq.sqrt() <= radius
            })
        })
        .collect()
}

/// Mean of a metric trace from its minimum to the end.
pub fn tail_mean(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptyInput { what: "metric trace" });
    }
    let mut best = 0;
    for (i, &v) in series.iter().enumerate() {
        if v < series[best] {
            best = i;
        }
    }
    Ok(mean(&series[best..]))
}

/// Across-trial summary: each trial contributes its tail mean; the result
/// is their mean and sample standard deviation (zero for a single trial).
pub fn aggregate_trials(series: &[Vec<f64>]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::EmptyInput { what: "trials" });
    }
    let mut tails = Vec::with_capacity(series.len());
    for trace in series {
        tails.push(tail_mean(trace)?);
    }
    let m = mean(&tails);
    let sd = if tails.len() < 2 {
        0.0
    } else {
        crate::math::sample_variance(&tails).sqrt()
    };
    Ok((m, sd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::kde::Kde;
    use crate::reward::Fusion;
    use ndarray::{array, ArrayView1};

    #[test]
    fn reverse_kl_matches_the_analytic_value() {
        let p: Gaussian = Gaussian::standard(1);
        let q: Gaussian = Gaussian::isotropic(array![1.0], 1.0).unwrap();
        let policy = Mixture::single(p.clone());
        let mut rng = RngStream::new(60);

        let self_kl = reverse_kl(&policy, &p, 0.0, 20_000, &mut rng).unwrap();
        assert!(self_kl.value.abs() < 3.0 * self_kl.stderr + 1e-3);

        let kl = reverse_kl(&policy, &q, 0.0, 20_000, &mut rng).unwrap();
        assert!(
            (kl.value - 0.5).abs() < 5.0 * kl.stderr,
            "KL {} +- {}",
            kl.value,
            kl.stderr
        );
        assert!(kl.stderr > 0.0 && kl.stderr < 0.05);
    }

    #[test]
    fn log_normalizer_recovers_a_known_offset() {
        struct Scaled {
            base: Gaussian<f64>,
            log_c: f64,
        }
        impl Density<f64> for Scaled {
            fn dim(&self) -> usize {
                1
            }
            fn log_pdf(&self, x: &ArrayView1<f64>) -> Result<f64> {
                Ok(self.base.log_pdf(x)? + self.log_c)
            }
        }
        let base: Gaussian = Gaussian::standard(1);
        let target = Scaled {
            base: base.clone(),
            log_c: 3.7,
        };
        let mut rng = RngStream::new(61);

        // Proposal equal to the shape: every ratio is exactly the offset.
        let exact = estimate_log_normalizer(&target, &base, 500, &mut rng).unwrap();
        assert!((exact - 3.7).abs() < 1e-12);

        // Realistic proposal: a fusion of a broad prior and a KDE.
        let prior: Gaussian = Gaussian::isotropic(array![0.0], 9.0).unwrap();
        let pts = base.sample(&mut rng, 400);
        let kde = Kde::new(pts, 0.3).unwrap();
        let fusion = Fusion::new(&prior, &kde).unwrap();
        let noisy = estimate_log_normalizer(&target, &fusion, 20_000, &mut rng).unwrap();
        assert!((noisy - 3.7).abs() < 0.05, "log Z {noisy}");
    }

    #[test]
    fn negative_elbo_of_a_normalized_reward_is_the_reverse_kl() {
        let p: Gaussian = Gaussian::standard(1);
        let q: Gaussian = Gaussian::isotropic(array![1.0], 1.0).unwrap();
        let policy = Mixture::single(p);
        let mut rng = RngStream::new(62);
        let e = negative_elbo(&policy, &q, 20_000, &mut rng).unwrap();
        assert!((e.value - 0.5).abs() < 5.0 * e.stderr);
    }

    #[test]
    fn mode_scores_separate_covered_from_missing_centers() {
        let centers = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let a: Gaussian = Gaussian::isotropic(array![1.0, 1.0], 0.01).unwrap();
        let b: Gaussian = Gaussian::isotropic(array![-1.0, -1.0], 0.01).unwrap();
        let model = Mixture::new(&[0.5, 0.5], vec![a, b]).unwrap();
        let mut rng = RngStream::new(63);
        let rep =
            mode_representation(&model, &centers.view(), 1.5, 200, &mut rng).unwrap();
        assert!(!rep.degenerate);
        assert!(rep.scores[0] > 0.9, "covered: {:?}", rep.scores);
        assert!(rep.scores[3] > 0.9, "covered: {:?}", rep.scores);
        assert!(rep.scores[1] < 0.4, "missing: {:?}", rep.scores);
        assert!(rep.scores[2] < 0.4, "missing: {:?}", rep.scores);
        assert!(rep.scores[0] - rep.scores[1] > 0.5);
        assert!(rep.mean() > 0.0 && rep.mean() < 1.0);
    }

    #[test]
    fn true_walker_density_maxes_every_center() {
        use crate::tasks::GridWalkerTask;
        let task = GridWalkerTask::<f64>::with_defaults(2).unwrap();
        let centers = task.mode_centers();
        let hw = task.box_halfwidth();
        let mut rng = RngStream::new(66);
        let rep =
            mode_representation(&task, &centers.view(), hw, 100, &mut rng).unwrap();
        assert_eq!(rep.scores.len(), 4);
        assert_eq!(rep.negative_scores.len(), 100);
        for &s in &rep.scores {
            assert!((s - 1.0).abs() < 1e-9, "center score {s}");
        }
        assert!(rep.min_center_score() > percentile(&rep.negative_scores, 90.0).unwrap());
    }

    #[test]
    fn percentile_uses_nearest_rank() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 20.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 40.0).unwrap(), 2.0);
        assert_eq!(percentile(&v, 90.0).unwrap(), 5.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 5.0);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn suspiciously_negative_kl_is_flagged() {
        let good = MetricEstimate {
            value: -0.01,
            stderr: 0.02,
        };
        let bad = MetricEstimate {
            value: -0.2,
            stderr: 0.02,
        };
        let snap = MetricSnapshot::new(0, good, good, None, 1.0);
        assert!(!snap.kl_flagged);
        let snap = MetricSnapshot::new(1, bad, good, None, 1.0);
        assert!(snap.kl_flagged);
    }

    #[test]
    fn constant_models_are_flagged_degenerate() {
        struct Flat;
        impl Density<f64> for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn log_pdf(&self, _: &ArrayView1<f64>) -> Result<f64> {
                Ok(0.0)
            }
        }
        let centers = array![[1.0, 1.0], [-1.0, -1.0]];
        let mut rng = RngStream::new(64);
        let rep = mode_representation(&Flat, &centers.view(), 1.5, 100, &mut rng).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.scores, vec![0.5, 0.5]);
        assert_eq!(rep.negative_scores.len(), 100);
        assert!(rep.negative_scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn explored_modes_follow_component_means() {
        let centers = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let a: Gaussian = Gaussian::isotropic(array![0.9, 1.1], 0.1).unwrap();
        let b: Gaussian = Gaussian::isotropic(array![-1.0, -1.0], 0.1).unwrap();
        let policy = Mixture::new(&[0.5, 0.5], vec![a, b]).unwrap();
        let flags = explored_modes(&policy, &centers.view());
        assert_eq!(flags, vec![true, false, false, true]);
    }

    #[test]
    fn trial_aggregation_averages_from_the_minimum_onward() {
        assert_eq!(tail_mean(&[3.0, 1.0, 2.0]).unwrap(), 1.5);
        assert_eq!(tail_mean(&[5.0]).unwrap(), 5.0);
        assert!(tail_mean(&[]).is_err());

        let (m, sd) = aggregate_trials(&[vec![3.0, 1.0, 2.0], vec![5.0, 4.0, 6.0]]).unwrap();
        assert!((m - 3.25).abs() < 1e-12);
        assert!((sd - 1.75 * 2f64.sqrt()).abs() < 1e-12);

        let (m1, sd1) = aggregate_trials(&[vec![2.0, 4.0]]).unwrap();
        assert_eq!(m1, 3.0);
        assert_eq!(sd1, 0.0);
        assert!(aggregate_trials(&[]).is_err());
    }

    #[test]
    fn constant_traces_have_zero_stderr() {
        let p: Gaussian = Gaussian::standard(1);
        let policy = Mixture::single(p.clone());
        let mut rng = RngStream::new(65);
        let e = reverse_kl(&policy, &p, 0.0, 64, &mut rng).unwrap();
        // Same density on both sides: every term is exactly zero.
        assert_eq!(e.value, 0.0);
        assert_eq!(e.stderr, 0.0);
    }
}
