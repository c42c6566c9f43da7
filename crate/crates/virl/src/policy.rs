//! Trust-region improvement for Gaussian mixture policies.
//!
//! Each step fits, per component, a local quadratic surrogate of the target
//! advantage `T(x) = target(x) - log q(x)` by ridge regression on samples
//! from that component, then moves the component toward the surrogate
//! optimum in natural-parameter space. The step length is controlled by a
//! KL trust region: the update
//!
//! ```text
//! precision_new = precision + H / eta
//! shift_new     = shift + (g + H mean) / eta
//! ```
//!
//! is the closed-form maximizer of `E[T] - eta KL(new || old)`, and `eta`
//! is the smallest value not below 1 whose update stays inside the KL
//! bound. The floor at 1 means a component already close to the target
//! takes the exact tilt `q exp(T)`, so quadratic targets are fixed points.
//! Mixture weights move the same way: a bounded exponential tilt toward
//! each component's mean advantage.
//!
//! The `- log q` term in the advantage is what couples the components:
//! regions the mixture already covers are discounted, pushing components
//! apart instead of collapsing them onto the single best mode.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg;
use crate::math::logsumexp_view;
use crate::mixture::Mixture;
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const DEFAULT_KL_BOUND: f64 = 0.05;
pub const DEFAULT_WEIGHT_KL_BOUND: f64 = 0.05;
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Largest trust-region divisor tried before a component is skipped.
const MAX_ETA: f64 = 1e18;
const BISECTION_STEPS: usize = 80;

/// Settings for one policy improvement step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyStepConfig {
    /// KL(new || old) bound per component update.
    pub kl_bound: f64,
    /// Categorical KL bound for the weight update.
    pub weight_kl_bound: f64,
    /// Samples per component for the surrogate regression; 0 picks a
    /// dimension-dependent default, and values below the feature count are
    /// raised to keep the regression determined.
    pub surrogate_samples: usize,
    /// Relative ridge strength for the surrogate regression.
    pub ridge: f64,
}

impl Default for PolicyStepConfig {
    fn default() -> Self {
        PolicyStepConfig {
            kl_bound: DEFAULT_KL_BOUND,
            weight_kl_bound: DEFAULT_WEIGHT_KL_BOUND,
            surrogate_samples: 0,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl PolicyStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_bound > 0.0) || !self.kl_bound.is_finite() {
            return Err(Error::config("policy.kl_bound", "must be finite and > 0"));
        }
        if !(self.weight_kl_bound > 0.0) || !self.weight_kl_bound.is_finite() {
            return Err(Error::config(
                "policy.weight_kl_bound",
                "must be finite and > 0",
            ));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::config("policy.ridge", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Quadratic feature count in `d` dimensions: constant, linear, and the
/// upper triangle of the second-order terms.
pub fn quadratic_features(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentStatus {
    Updated,
    Skipped { reason: String },
}

/// Outcome of one component's trust-region update.
#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub eta: f64,
    pub kl: f64,
    /// Mean advantage `target - log q` over the component's samples,
    /// measured before any update.
    pub mean_advantage: f64,
    pub status: ComponentStatus,
}

/// Outcome of one full policy step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub components: Vec<ComponentReport>,
    pub weight_eta: f64,
    pub weight_kl: f64,
}

impl StepReport {
    pub fn updated_components(&self) -> usize {
        self.components
            .iter()
            .filter(|c| c.status == ComponentStatus::Updated)
            .count()
    }
}

/// A Gaussian mixture policy with trust-region improvement steps.
#[derive(Debug, Clone)]
pub struct GmmPolicy<S: Scalar = f64> {
    mixture: Mixture<S>,
}

impl<S: Scalar> GmmPolicy<S> {
    pub fn new(mixture: Mixture<S>) -> Self {
        GmmPolicy { mixture }
    }

    /// Standard initialization: component means drawn from the prior,
    /// covariances shrunk by `k^(2/d)` so the components tile the prior
    /// rather than stack on top of it, uniform weights.
    pub fn initial(prior: &Gaussian<S>, components: usize, rng: &mut RngStream) -> Result<Self> {
        if components == 0 {
            return Err(Error::EmptyInput { what: "components" });
        }
        let d = prior.mean().len();
        let shrink = S::of_usize(components).powf(-S::one() / S::of_usize(d));
        let chol = prior.chol() * shrink;
        let comps = (0..components)
            .map(|_| Gaussian::new(prior.sample_one(rng), chol.clone()))
            .collect::<Result<Vec<_>>>()?;
        let w = vec![S::one() / S::of_usize(components); components];
        Ok(GmmPolicy {
            mixture: Mixture::new(&w, comps)?,
        })
    }

    pub fn mixture(&self) -> &Mixture<S> {
        &self.mixture
    }

    pub fn into_mixture(self) -> Mixture<S> {
        self.mixture
    }

    /// Trains a fresh policy against a fixed reward: `components` initial
    /// Gaussians spread over the prior's support, then `steps` trust-region
    /// updates. This is how a recovered reward is used stand-alone, without
    /// the sampling policy that produced it.
    pub fn fit_inference_policy(
        reward: &dyn Density<S>,
        prior: &Gaussian<S>,
        components: usize,
        steps: usize,
        cfg: &PolicyStepConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut policy = GmmPolicy::initial(prior, components, rng)?;
        for _ in 0..steps {
            policy.step(reward, cfg, rng)?;
        }
        Ok(policy)
    }

    /// One trust-region step toward `target`. Components that cannot
    /// produce a valid update are kept as they are and reported as skipped;
    /// if every component is skipped the step fails.
    pub fn step(
        &mut self,
        target: &dyn Density<S>,
        cfg: &PolicyStepConfig,
        rng: &mut RngStream,
    ) -> Result<StepReport> {
        let k = self.mixture.len();
        let d = self.mixture.component(0).mean().len();
        if target.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: target.dim(),
            });
        }
        let p = quadratic_features(d);
        let n = match cfg.surrogate_samples {
            0 => 10 * p,
            n => n.max(p + 1),
        };

        // Sample and score every component against the pre-step mixture so
        // the update is synchronous.
        let mut samples = Vec::with_capacity(k);
        let mut advantages = Vec::with_capacity(k);
        let mut mean_adv = Array1::zeros(k);
        for j in 0..k {
            let xs = self.mixture.component(j).sample(rng, n);
            let mut t = Array1::zeros(n);
            for (i, row) in xs.rows().into_iter().enumerate() {
                let v = target.log_pdf(&row)? - self.mixture.log_pdf(&row)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("advantage at component {j}"),
                    });
                }
                t[i] = v;
            }
            mean_adv[j] = t.sum() / S::of_usize(n);
            samples.push(xs);
            advantages.push(t);
        }

        let mut new_mixture = self.mixture.clone();
        let mut reports = Vec::with_capacity(k);
        for j in 0..k {
            let old = self.mixture.component(j);
            let report = match update_component(old, &samples[j], &advantages[j], cfg) {
                Ok((gaussian, eta, kl)) => {
                    new_mixture.set_component(j, gaussian)?;
                    ComponentReport {
                        eta: eta.as_f64(),
                        kl: kl.as_f64(),
                        mean_advantage: mean_adv[j].as_f64(),
                        status: ComponentStatus::Updated,
                    }
                }
                Err(reason) => ComponentReport {
                    eta: f64::INFINITY,
                    kl: 0.0,
                    mean_advantage: mean_adv[j].as_f64(),
                    status: ComponentStatus::Skipped { reason },
                },
            };
            reports.push(report);
        }
        if reports
            .iter()
            .all(|r| matches!(r.status, ComponentStatus::Skipped { .. }))
        {
            return Err(Error::NoUsableComponent);
        }

        let (weight_eta, weight_kl) = if k > 1 {
            let (lw, eta, kl) = update_weights(
                &self.mixture.log_weights().view(),
                &mean_adv.view(),
                S::of_f64(cfg.weight_kl_bound),
            );
            new_mixture.set_log_weights(lw)?;
            (eta.as_f64(), kl.as_f64())
        } else {
            (1.0, 0.0)
        };

        self.mixture = new_mixture;
        Ok(StepReport {
            components: reports,
            weight_eta,
            weight_kl,
        })
    }
}

/// Fits the quadratic surrogate in whitened coordinates and returns the
/// natural-parameter pieces `(g, H)` mapped back to the original space.
fn fit_surrogate<S: Scalar>(
    old: &Gaussian<S>,
    xs: &Array2<S>,
    t: &Array1<S>,
    ridge: S,
) -> Result<(Array1<S>, Array2<S>)> {
    let d = old.mean().len();
    let n = xs.nrows();
    let p = quadratic_features(d);
    let l0 = old.chol();

    let mut feats = Array2::zeros((n, p));
    for (i, row) in xs.rows().into_iter().enumerate() {
        let delta = &row - old.mean();
        let u = linalg::solve_lower(&l0.view(), &delta.view());
        feats[[i, 0]] = S::one();
        for a in 0..d {
            feats[[i, 1 + a]] = u[a];
        }
        let mut col = 1 + d;
        for a in 0..d {
            for b in a..d {
                feats[[i, col]] = u[a] * u[b];
                col += 1;
            }
        }
    }

    let mut gram = feats.t().dot(&feats);
    let trace = (0..p).map(|i| gram[[i, i]]).sum::<S>();
    let jitter = ridge * (trace / S::of_usize(p)).max(S::one());
    for i in 0..p {
        gram[[i, i]] += jitter;
    }
    let rhs = feats.t().dot(t);
    let cl = linalg::cholesky(&gram.view())?;
    let beta = linalg::spd_solve(&cl.view(), &rhs.view());

    let g_u = beta.slice(ndarray::s![1..1 + d]).to_owned();
    let mut h_u = Array2::zeros((d, d));
    let mut col = 1 + d;
    for a in 0..d {
        for b in a..d {
            let c = beta[col];
            if a == b {
                h_u[[a, a]] = -(c + c);
            } else {
                h_u[[a, b]] = -c;
                h_u[[b, a]] = -c;
            }
            col += 1;
        }
    }

    // Back from whitened coordinates: the inverse factor is triangular, so
    // build it column by column.
    let mut l_inv = Array2::zeros((d, d));
    for a in 0..d {
        let mut e = Array1::zeros(d);
        e[a] = S::one();
        let col = linalg::solve_lower(&l0.view(), &e.view());
        l_inv.column_mut(a).assign(&col);
    }
    let g_x = l_inv.t().dot(&g_u);
    let h_x = l_inv.t().dot(&h_u).dot(&l_inv);
    Ok((g_x, h_x))
}

/// Natural-parameter candidate for one trust-region divisor.
fn candidate<S: Scalar>(
    old: &Gaussian<S>,
    lam0: &Array2<S>,
    shift0: &Array1<S>,
    g: &Array1<S>,
    h: &Array2<S>,
    eta: S,
) -> Option<(Gaussian<S>, S)> {
    let lam = lam0 + &h.mapv(|v| v / eta);
    let shift = shift0 + &((g + &h.dot(old.mean())).mapv(|v| v / eta));
    let cl = linalg::cholesky(&lam.view()).ok()?;
    let mean = linalg::spd_solve(&cl.view(), &shift.view());
    if mean.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let cov = linalg::spd_inverse(&cl.view());
    let gaussian = Gaussian::from_covariance(mean, &cov.view()).ok()?;
    let kl = gaussian.kl(old).ok()?;
    kl.is_finite().then_some((gaussian, kl))
}

/// Searches for the smallest `eta >= 1` whose update satisfies the KL
/// bound. Failures to produce a valid Gaussian count as exceeding the
/// bound, since larger `eta` always recovers the old component.
fn update_component<S: Scalar>(
    old: &Gaussian<S>,
    xs: &Array2<S>,
    t: &Array1<S>,
    cfg: &PolicyStepConfig,
) -> std::result::Result<(Gaussian<S>, S, S), String> {
    let (g, h) = fit_surrogate(old, xs, t, S::of_f64(cfg.ridge))
        .map_err(|e| format!("surrogate regression failed: {e}"))?;
    let lam0 = old.precision();
    let shift0 = lam0.dot(old.mean());
    let bound = S::of_f64(cfg.kl_bound);

    let one = S::one();
    if let Some((gaussian, kl)) = candidate(old, &lam0, &shift0, &g, &h, one) {
        if kl <= bound {
            return Ok((gaussian, one, kl));
        }
    }

    let mut hi = S::of_f64(2.0);
    loop {
        if let Some((_, kl)) = candidate(old, &lam0, &shift0, &g, &h, hi) {
            if kl <= bound {
                break;
            }
        }
        hi *= S::of_f64(2.0);
        if hi > S::of_f64(MAX_ETA) {
            return Err("no trust-region divisor produced a valid update".into());
        }
    }
    let mut lo = (hi / S::of_f64(2.0)).max(one);
    for _ in 0..BISECTION_STEPS {
        let mid = (lo + hi) / S::of_f64(2.0);
        match candidate(old, &lam0, &shift0, &g, &h, mid) {
            Some((_, kl)) if kl <= bound => hi = mid,
            _ => lo = mid,
        }
    }
    let (gaussian, kl) =
        candidate(old, &lam0, &shift0, &g, &h, hi).expect("bisection kept a valid divisor");
    Ok((gaussian, hi, kl))
}

/// Bounded exponential tilt of the mixture weights toward the component
/// advantages. Returns the new log weights with the divisor and realized
/// categorical KL.
fn update_weights<S: Scalar>(
    old_lw: &ArrayView1<S>,
    advantage: &ArrayView1<S>,
    bound: S,
) -> (Array1<S>, S, S) {
    let tilt = |eta: S| -> (Array1<S>, S) {
        let mut lw = old_lw + &advantage.mapv(|v| v / eta);
        let z = logsumexp_view(&lw.view()).expect("finite log weights");
        lw -= z;
        let kl = lw
            .iter()
            .zip(old_lw)
            .map(|(&new, &old)| new.exp() * (new - old))
            .sum();
        (lw, kl)
    };

    let one = S::one();
    let (lw, kl) = tilt(one);
    if kl <= bound {
        return (lw, one, kl);
    }
    let mut hi = S::of_f64(2.0);
    while tilt(hi).1 > bound {
        hi *= S::of_f64(2.0);
    }
    let mut lo = (hi / S::of_f64(2.0)).max(one);
    for _ in 0..BISECTION_STEPS {
        let mid = (lo + hi) / S::of_f64(2.0);
        if tilt(mid).1 <= bound {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (lw, kl) = tilt(hi);
    (lw, hi, kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn step_cfg(kl_bound: f64) -> PolicyStepConfig {
        PolicyStepConfig {
            kl_bound,
            weight_kl_bound: kl_bound,
            surrogate_samples: 0,
            ridge: 1e-10,
        }
    }

    #[test]
    fn quadratic_target_is_reached_in_one_unbounded_step() {
        let target: Gaussian =
            Gaussian::from_covariance(array![1.5, -0.5], &array![[0.8, 0.3], [0.3, 1.2]].view())
                .unwrap();
        let start: Gaussian = Gaussian::isotropic(array![0.0, 0.0], 2.0).unwrap();
        let mut policy = GmmPolicy::new(Mixture::single(start));
        let mut rng = RngStream::new(31);
        let report = policy.step(&target, &step_cfg(1e6), &mut rng).unwrap();
        assert_eq!(report.components[0].status, ComponentStatus::Updated);
        assert_eq!(report.components[0].eta, 1.0);
        let kl = policy.mixture().component(0).kl(&target).unwrap();
        assert!(kl < 1e-6, "KL to target {kl}");
    }

    #[test]
    fn own_density_is_a_fixed_point() {
        let a: Gaussian = Gaussian::isotropic(array![-1.0, 0.0], 0.7).unwrap();
        let b: Gaussian = Gaussian::isotropic(array![2.0, 1.0], 1.3).unwrap();
        let mix = Mixture::new(&[0.4, 0.6], vec![a, b]).unwrap();
        let mut policy = GmmPolicy::new(mix.clone());
        let mut rng = RngStream::new(32);
        let report = policy.step(&mix, &step_cfg(0.05), &mut rng).unwrap();
        for (j, c) in report.components.iter().enumerate() {
            assert_eq!(c.status, ComponentStatus::Updated);
            assert!(c.kl < 1e-10, "component {j} moved: KL {}", c.kl);
            assert!(c.mean_advantage.abs() < 1e-8);
            let kl = policy.mixture().component(j).kl(mix.component(j)).unwrap();
            assert!(kl < 1e-10);
        }
        assert!(report.weight_kl < 1e-10);
    }

    #[test]
    fn every_step_respects_the_kl_bound() {
        let target: Gaussian = Gaussian::isotropic(array![10.0], 0.5).unwrap();
        let start: Gaussian = Gaussian::isotropic(array![0.0], 1.0).unwrap();
        let mut policy = GmmPolicy::new(Mixture::single(start));
        let mut rng = RngStream::new(33);
        let cfg = step_cfg(0.05);
        let slack = 0.05 * 1e-6 + 1e-12;
        for _ in 0..30 {
            let before = policy.mixture().component(0).clone();
            let report = policy.step(&target, &cfg, &mut rng).unwrap();
            assert!(report.components[0].kl <= 0.05 + slack);
            let measured = policy.mixture().component(0).kl(&before).unwrap();
            assert!(measured <= 0.05 + slack, "measured KL {measured}");
        }
        let progress = policy.mixture().component(0).kl(&target).unwrap();
        assert!(progress < 20.0, "far from target: {progress}");
    }

    #[test]
    fn single_component_converges_under_a_tight_bound() {
        let target: Gaussian = Gaussian::from_covariance(
            array![3.0, -2.0],
            &array![[1.5, 0.4], [0.4, 0.8]].view(),
        )
        .unwrap();
        let start: Gaussian = Gaussian::isotropic(array![0.0, 0.0], 4.0).unwrap();
        let mut policy = GmmPolicy::new(Mixture::single(start));
        let mut rng = RngStream::new(34);
        let cfg = step_cfg(0.05);
        for _ in 0..200 {
            policy.step(&target, &cfg, &mut rng).unwrap();
        }
        let kl = policy.mixture().component(0).kl(&target).unwrap();
        assert!(kl < 1e-2, "KL after 200 steps: {kl}");
    }

    #[test]
    fn inference_policy_recovers_a_gaussian_reward() {
        let reward: Gaussian = Gaussian::from_covariance(
            array![1.0, -2.0],
            &array![[0.9, 0.2], [0.2, 0.6]].view(),
        )
        .unwrap();
        let prior: Gaussian = Gaussian::isotropic(array![0.0, 0.0], 9.0).unwrap();
        let mut rng = RngStream::new(36);
        let policy = GmmPolicy::fit_inference_policy(
            &reward,
            &prior,
            1,
            200,
            &step_cfg(0.05),
            &mut rng,
        )
        .unwrap();
        let kl = policy.mixture().component(0).kl(&reward).unwrap();
        assert!(kl < 1e-2, "KL after inference fit: {kl}");
    }

    #[test]
    fn weights_tilt_toward_the_supported_component() {
        let left: Gaussian = Gaussian::isotropic(array![-3.0], 0.25).unwrap();
        let right: Gaussian = Gaussian::isotropic(array![3.0], 0.25).unwrap();
        let mix = Mixture::new(&[0.5, 0.5], vec![left, right.clone()]).unwrap();
        let mut policy = GmmPolicy::new(mix);
        let mut rng = RngStream::new(35);
        let report = policy.step(&right, &step_cfg(0.05), &mut rng).unwrap();
        let w = policy.mixture().weights();
        assert!(w[1] > w[0], "weights {w}");
        assert!(report.weight_kl <= 0.05 + 1e-9);
        assert!(report.components[1].mean_advantage > report.components[0].mean_advantage);
    }

    #[test]
    fn initial_policy_follows_the_shrink_rule() {
        let prior: Gaussian = Gaussian::isotropic(array![0.0, 0.0], 9.0).unwrap();
        let mut rng = RngStream::new(36);
        let policy = GmmPolicy::initial(&prior, 4, &mut rng).unwrap();
        let mix = policy.mixture();
        assert_eq!(mix.len(), 4);
        // k^(2/d) = 4 in two dimensions: variance 9/4, factor sqrt(1/4) on
        // the factor matrix.
        for c in mix.components() {
            assert!((c.chol()[[0, 0]] - 1.5).abs() < 1e-12);
            assert!((c.chol()[[1, 1]] - 1.5).abs() < 1e-12);
        }
        let w = mix.weights();
        for &v in &w {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert!(GmmPolicy::initial(&prior, 0, &mut rng).is_err());
    }

    #[test]
    fn non_finite_targets_are_a_hard_error() {
        struct Bad;
        impl Density<f64> for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn log_pdf(&self, _: &ndarray::ArrayView1<f64>) -> crate::error::Result<f64> {
                Ok(f64::NAN)
            }
        }
        let start: Gaussian = Gaussian::isotropic(array![0.0], 1.0).unwrap();
        let mut policy = GmmPolicy::new(Mixture::single(start));
        let err = policy.step(&Bad, &step_cfg(0.05), &mut RngStream::new(37));
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }
}
