//! The three imitation loops sharing one policy optimizer.
//!
//! All three alternate between estimating a reward from demonstrations and
//! moving a Gaussian mixture policy toward it under KL trust regions. They
//! differ only in how the reward is represented and which distribution
//! supplies the negatives:
//!
//! * [`virl_run`]: each iteration trains a fresh discriminator on experts
//!   against importance-weighted samples from a policy/demonstration
//!   fusion, then pushes its logit onto a cumulative reward stack anchored
//!   at a broad prior.
//! * [`geim_run`]: one persistent reward network; its training logit is
//!   the network output minus the log-density of the negative sampler, so
//!   the network alone converges to the expert log-density instead of a
//!   ratio against a moving sampler.
//! * [`eim_run`]: a plain density-ratio network, warm-started across
//!   iterations; the policy moves toward its own frozen log-density plus
//!   the ratio, the classic variational lower-bound target.
//!
//! Each loop reports per-iteration diagnostics through an observer
//! callback so callers can evaluate metrics without snapshotting reward
//! stacks.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::density::Density;
use crate::discriminator::{Discriminator, MlpConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::kde::Kde;
use crate::math::softplus;
use crate::mixture::Mixture;
use crate::policy::{ComponentStatus, GmmPolicy, PolicyStepConfig};
use crate::reward::{
    CumulativeReward, DensitySampler, Fusion, ImportanceWeights, RewardPrior,
};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const DEFAULT_NEGATIVES: usize = 1024;
pub const DEFAULT_MIN_ESS_FRACTION: f64 = 0.1;

/// Knobs shared by every loop. Method-specific fields are documented as
/// such and ignored elsewhere.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Outer iterations. Zero returns the untouched prior bundle.
    pub iterations: usize,
    /// Negative samples drawn per iteration.
    pub negatives: usize,
    /// Discriminator passes over the data per iteration.
    pub epochs: usize,
    pub batch_size: usize,
    /// Fallback threshold: if the effective sample size of the importance
    /// weights drops below this share of `negatives`, the iteration
    /// redraws its negatives from the demonstration KDE alone. Only the
    /// cumulative loop reweights, so only it can fall back.
    pub min_ess_fraction: f64,
    /// Trust-region policy steps per iteration.
    pub policy_steps: usize,
    pub policy: PolicyStepConfig,
    pub discriminator: MlpConfig,
    /// Persistent-network loop only: draw negatives from the
    /// policy/demonstration fusion instead of the policy alone.
    pub geim_fusion_negatives: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            iterations: 10,
            negatives: DEFAULT_NEGATIVES,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            min_ess_fraction: DEFAULT_MIN_ESS_FRACTION,
            policy_steps: 1,
            policy: PolicyStepConfig::default(),
            discriminator: MlpConfig::default(),
            geim_fusion_negatives: false,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if self.negatives == 0 {
            return Err(Error::config("run.negatives", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("run.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("run.batch_size", "must be positive"));
        }
        if !self.min_ess_fraction.is_finite() || self.min_ess_fraction < 0.0 {
            return Err(Error::config(
                "run.min_ess_fraction",
                "must be finite and >= 0",
            ));
        }
        self.policy.validate()
    }
}

/// Diagnostics for one outer iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Effective sample size of the negative weights.
    pub ess: f64,
    pub used_kde_fallback: bool,
    /// Full-set training loss after the iteration's updates.
    pub discriminator_loss: f64,
    /// Mean absolute logit of the newest discriminator on held-out
    /// experts; near zero once new stack entries stop learning anything.
    pub expert_logit_mean_abs: Option<f64>,
    pub updated_components: usize,
    pub skipped_components: usize,
}

/// What an observer sees after each iteration.
pub struct IterationView<'a, S: Scalar> {
    pub record: &'a IterationRecord,
    pub reward: &'a dyn Density<S>,
    pub policy: &'a Mixture<S>,
}

/// Observer invoked once per iteration; an error aborts the run.
pub type Observer<'o, S> = dyn FnMut(IterationView<'_, S>) -> Result<()> + 'o;

/// Final state of a loop.
#[derive(Debug, Clone)]
pub struct RunOutcome<S: Scalar = f64> {
    pub reward: CumulativeReward<S>,
    pub policy: Mixture<S>,
    pub records: Vec<IterationRecord>,
}

/// A discriminator's raw logit viewed as an unnormalized log-density.
pub struct LogitDensity<'a, S: Scalar> {
    net: &'a Discriminator<S>,
}

impl<'a, S: Scalar> LogitDensity<'a, S> {
    pub fn new(net: &'a Discriminator<S>) -> Self {
        LogitDensity { net }
    }
}

impl<S: Scalar> Density<S> for LogitDensity<'_, S> {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        self.net.forward_logit(x)
    }

    fn log_pdf_batch(&self, xs: &ArrayView2<S>) -> Result<Array1<S>> {
        self.net.logit_batch(xs)
    }
}

/// Frozen mixture log-density plus a ratio logit: the variational target
/// of the plain density-ratio loop.
struct FrozenRatio<'a, S: Scalar> {
    base: &'a Mixture<S>,
    net: &'a Discriminator<S>,
}

impl<S: Scalar> Density<S> for FrozenRatio<'_, S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn log_pdf(&self, x: &ArrayView1<S>) -> Result<S> {
        Ok(self.base.log_pdf(x)? + self.net.forward_logit(x)?)
    }
}

fn check_dims<S: Scalar>(
    dim: usize,
    experts: &ArrayView2<S>,
    kde: Option<&Kde<S>>,
    policy: &GmmPolicy<S>,
) -> Result<()> {
    if experts.nrows() == 0 {
        return Err(Error::EmptyInput { what: "experts" });
    }
    if experts.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: experts.ncols(),
        });
    }
    if let Some(k) = kde {
        if k.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: k.dim(),
            });
        }
    }
    if policy.mixture().dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: policy.mixture().dim(),
        });
    }
    Ok(())
}

/// Runs `steps` trust-region updates and returns how many component
/// updates succeeded and how many were skipped, summed over the steps.
fn improve_policy<S: Scalar>(
    policy: &mut GmmPolicy<S>,
    target: &dyn Density<S>,
    opts: &RunOptions,
    rng: &mut RngStream,
) -> Result<(usize, usize)> {
    let mut updated = 0;
    let mut skipped = 0;
    for _ in 0..opts.policy_steps {
        let report = policy.step(target, &opts.policy, rng)?;
        updated += report.updated_components();
        skipped += report.components.len() - report.updated_components();
    }
    Ok((updated, skipped))
}

/// Cumulative-reward loop: per iteration, a fresh discriminator trained on
/// experts against importance-weighted fusion negatives extends the reward
/// stack, then the policy chases the extended reward.
pub fn virl_run<S: Scalar>(
    prior: &Gaussian<S>,
    experts: &ArrayView2<S>,
    kde: &Kde<S>,
    mut policy: GmmPolicy<S>,
    opts: &RunOptions,
    rng: &mut RngStream,
    observe: &mut Observer<'_, S>,
) -> Result<RunOutcome<S>> {
    opts.validate()?;
    let dim = prior.dim();
    check_dims(dim, experts, Some(kde), &policy)?;

    // Hold out a slice of the experts to watch convergence: once fresh
    // discriminators cannot tell held-out experts from the sampler, the
    // stack has stopped learning.
    let m = experts.nrows();
    let holdout_n = (m / 10).max(1);
    let train_n = m - holdout_n;
    let mut idx: Vec<usize> = (0..m).collect();
    rng.shuffle(&mut idx);
    let (train, holdout) = if train_n == 0 {
        (experts.to_owned(), experts.to_owned())
    } else {
        (
            experts.select(Axis(0), &idx[..train_n]),
            experts.select(Axis(0), &idx[train_n..]),
        )
    };

    let mut reward = CumulativeReward::new(RewardPrior::Gaussian(prior.clone()));
    let mut records = Vec::with_capacity(opts.iterations);
    let min_ess = opts.min_ess_fraction * opts.negatives as f64;

    for iteration in 0..opts.iterations {
        let fusion = Fusion::new(policy.mixture(), kde)?;
        let mut negatives = fusion.sample(rng, opts.negatives);
        let mut ratios = reward.evaluate_batch(&negatives.view())?
            - &fusion.log_pdf_batch(&negatives.view())?;
        let mut used_kde_fallback = false;
        let weights = match ImportanceWeights::from_log_ratios(&ratios.view()) {
            Ok(w) if w.ess().as_f64() >= min_ess => w,
            _ => {
                // The fusion no longer overlaps the reward; fall back to
                // negatives from the demonstration estimate, which the
                // reward always covers.
                used_kde_fallback = true;
                negatives = kde.sample(rng, opts.negatives);
                ratios = reward.evaluate_batch(&negatives.view())?
                    - &kde.log_pdf_batch(&negatives.view())?;
                ImportanceWeights::from_log_ratios(&ratios.view())?
            }
        };
        let ess = weights.ess().as_f64();

        let disc = Discriminator::new(dim, opts.discriminator.clone(), rng)?.fit(
            &train.view(),
            &negatives.view(),
            &weights.weights().view(),
            opts.epochs,
            opts.batch_size,
            rng,
        )?;
        let batch = crate::discriminator::WeightedBatch::new(
            train.clone(),
            negatives,
            weights.into_weights(),
        )?;
        let discriminator_loss = disc.weighted_bce_loss(&batch)?.as_f64();
        let holdout_logits = disc.logit_batch(&holdout.view())?;
        let indicator = holdout_logits.iter().map(|l| l.abs().as_f64()).sum::<f64>()
            / holdout_logits.len() as f64;

        reward.push(disc)?;
        let (updated, skipped) = improve_policy(&mut policy, &reward, opts, rng)?;

        let record = IterationRecord {
            iteration,
            ess,
            used_kde_fallback,
            discriminator_loss,
            expert_logit_mean_abs: Some(indicator),
            updated_components: updated,
            skipped_components: skipped,
        };
        observe(IterationView {
            record: &record,
            reward: &reward,
            policy: policy.mixture(),
        })?;
        records.push(record);
    }

    Ok(RunOutcome {
        reward,
        policy: policy.into_mixture(),
        records,
    })
}

/// Persistent-network loop: one reward network trained every iteration
/// with a sampler-offset logit, so the network itself estimates the expert
/// log-density up to a constant.
pub fn geim_run<S: Scalar>(
    experts: &ArrayView2<S>,
    kde: &Kde<S>,
    mut policy: GmmPolicy<S>,
    opts: &RunOptions,
    rng: &mut RngStream,
    observe: &mut Observer<'_, S>,
) -> Result<RunOutcome<S>> {
    opts.validate()?;
    let dim = experts.ncols();
    check_dims(dim, experts, Some(kde), &policy)?;

    let mut net = Discriminator::new(dim, opts.discriminator.clone(), rng)?;
    let mut records = Vec::with_capacity(opts.iterations);

    for iteration in 0..opts.iterations {
        let (negatives, pos_off, neg_off) = if opts.geim_fusion_negatives {
            let fusion = Fusion::new(policy.mixture(), kde)?;
            let negatives = fusion.sample(rng, opts.negatives);
            let pos_off = fusion.log_pdf_batch(experts)?.mapv(|v| -v);
            let neg_off = fusion.log_pdf_batch(&negatives.view())?.mapv(|v| -v);
            (negatives, pos_off, neg_off)
        } else {
            let sampler = policy.mixture();
            let negatives = sampler.sample(rng, opts.negatives);
            let pos_off = sampler.log_pdf_batch(experts)?.mapv(|v| -v);
            let neg_off = sampler.log_pdf_batch(&negatives.view())?.mapv(|v| -v);
            (negatives, pos_off, neg_off)
        };

        train_with_offsets(
            &mut net,
            experts,
            &pos_off.view(),
            &negatives.view(),
            &neg_off.view(),
            opts.epochs,
            opts.batch_size,
            rng,
        )?;
        let discriminator_loss = offset_loss(
            &net,
            experts,
            &pos_off.view(),
            &negatives.view(),
            &neg_off.view(),
        )?;

        let target = LogitDensity::new(&net);
        let (updated, skipped) = improve_policy(&mut policy, &target, opts, rng)?;

        let record = IterationRecord {
            iteration,
            ess: opts.negatives as f64,
            used_kde_fallback: false,
            discriminator_loss,
            expert_logit_mean_abs: None,
            updated_components: updated,
            skipped_components: skipped,
        };
        observe(IterationView {
            record: &record,
            reward: &LogitDensity::new(&net),
            policy: policy.mixture(),
        })?;
        records.push(record);
    }

    net.set_eval();
    let mut reward = CumulativeReward::new(RewardPrior::Flat { dim });
    reward.push(net)?;
    Ok(RunOutcome {
        reward,
        policy: policy.into_mixture(),
        records,
    })
}

/// Density-ratio loop: a warm-started ratio network against plain policy
/// samples; the policy target is its own frozen log-density plus the
/// ratio. The network refits from its previous state, so later iterations
/// need fewer passes.
pub fn eim_run<S: Scalar>(
    experts: &ArrayView2<S>,
    mut policy: GmmPolicy<S>,
    opts: &RunOptions,
    rng: &mut RngStream,
    observe: &mut Observer<'_, S>,
) -> Result<RunOutcome<S>> {
    opts.validate()?;
    let dim = experts.ncols();
    check_dims(dim, experts, None, &policy)?;

    let mut net = Discriminator::new(dim, opts.discriminator.clone(), rng)?;
    let uniform = Array1::from_elem(opts.negatives, S::one() / S::of_usize(opts.negatives));
    let mut records = Vec::with_capacity(opts.iterations);

    for iteration in 0..opts.iterations {
        let frozen = policy.mixture().clone();
        let negatives = frozen.sample(rng, opts.negatives);
        let epochs = if iteration == 0 {
            opts.epochs
        } else {
            (opts.epochs / 2).max(1)
        };
        net.set_train();
        net = net.fit(
            experts,
            &negatives.view(),
            &uniform.view(),
            epochs,
            opts.batch_size,
            rng,
        )?;
        let batch = crate::discriminator::WeightedBatch::new(
            experts.to_owned(),
            negatives,
            uniform.clone(),
        )?;
        let discriminator_loss = net.weighted_bce_loss(&batch)?.as_f64();

        let target = FrozenRatio {
            base: &frozen,
            net: &net,
        };
        let (updated, skipped) = improve_policy(&mut policy, &target, opts, rng)?;

        let record = IterationRecord {
            iteration,
            ess: opts.negatives as f64,
            used_kde_fallback: false,
            discriminator_loss,
            expert_logit_mean_abs: None,
            updated_components: updated,
            skipped_components: skipped,
        };
        observe(IterationView {
            record: &record,
            reward: policy.mixture(),
            policy: policy.mixture(),
        })?;
        records.push(record);
    }

    let reward = CumulativeReward::new(RewardPrior::Mixture(policy.mixture().clone()));
    Ok(RunOutcome {
        reward,
        policy: policy.into_mixture(),
        records,
    })
}

/// Minibatch BCE training where each logit is the network output plus a
/// fixed offset. The offsets are constant in the parameters, so the
/// gradient passes through unchanged; both classes enter by batch mean.
#[allow(clippy::too_many_arguments)]
fn train_with_offsets<S: Scalar>(
    net: &mut Discriminator<S>,
    pos: &ArrayView2<S>,
    pos_off: &ArrayView1<S>,
    neg: &ArrayView2<S>,
    neg_off: &ArrayView1<S>,
    epochs: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<()> {
    let np = pos.nrows();
    let nn = neg.nrows();
    let dim = pos.ncols();
    let mut pos_idx: Vec<usize> = (0..np).collect();
    let mut neg_idx: Vec<usize> = (0..nn).collect();
    for _ in 0..epochs {
        rng.shuffle(&mut pos_idx);
        rng.shuffle(&mut neg_idx);
        let mut cursor = 0usize;
        for chunk in pos_idx.chunks(batch_size) {
            let take = chunk.len();
            let mut nsel = Vec::with_capacity(take);
            for _ in 0..take {
                if cursor == nn {
                    rng.shuffle(&mut neg_idx);
                    cursor = 0;
                }
                nsel.push(neg_idx[cursor]);
                cursor += 1;
            }
            let mut xs = Array2::zeros((2 * take, dim));
            xs.slice_mut(s![..take, ..])
                .assign(&pos.select(Axis(0), chunk));
            xs.slice_mut(s![take.., ..])
                .assign(&neg.select(Axis(0), &nsel));
            let raw = net.forward_train(&xs.view(), rng)?;
            let inv = S::one() / S::of_usize(take);
            let mut dlogits = Array1::zeros(2 * take);
            for (i, &row) in chunk.iter().enumerate() {
                let phi = raw[i] + pos_off[row];
                dlogits[i] = (crate::math::sigmoid(phi) - S::one()) * inv;
            }
            for (i, &row) in nsel.iter().enumerate() {
                let phi = raw[take + i] + neg_off[row];
                dlogits[take + i] = crate::math::sigmoid(phi) * inv;
            }
            net.backward_logits(&dlogits.view())?;
            net.adam_apply();
        }
    }
    Ok(())
}

/// Full-set BCE of the offset logit on the deterministic path.
fn offset_loss<S: Scalar>(
    net: &Discriminator<S>,
    pos: &ArrayView2<S>,
    pos_off: &ArrayView1<S>,
    neg: &ArrayView2<S>,
    neg_off: &ArrayView1<S>,
) -> Result<f64> {
    let lp = net.logit_batch(pos)?;
    let ln = net.logit_batch(neg)?;
    let mut loss = S::zero();
    for (l, o) in lp.iter().zip(pos_off) {
        loss += softplus(-(*l + *o)) / S::of_usize(lp.len());
    }
    for (l, o) in ln.iter().zip(neg_off) {
        loss += softplus(*l + *o) / S::of_usize(ln.len());
    }
    loss += net.l2_penalty();
    Ok(loss.as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_disc() -> MlpConfig {
        MlpConfig {
            layers: 2,
            layer_size: 16,
            batch_norm: false,
            learning_rate: 1e-3,
            dropout: 0.0,
            l2: 0.0,
        }
    }

    fn tiny_opts() -> RunOptions {
        RunOptions {
            iterations: 4,
            negatives: 500,
            epochs: 6,
            batch_size: 256,
            min_ess_fraction: 0.02,
            policy_steps: 8,
            policy: PolicyStepConfig {
                kl_bound: 0.2,
                weight_kl_bound: 0.2,
                ..PolicyStepConfig::default()
            },
            discriminator: tiny_disc(),
            geim_fusion_negatives: false,
        }
    }

    fn expert_setup(rng: &mut RngStream) -> (Gaussian<f64>, Array2<f64>, Kde<f64>, GmmPolicy<f64>) {
        let target: Gaussian = Gaussian::from_covariance(
            array![2.0, -1.0],
            &array![[0.4, 0.1], [0.1, 0.3]].view(),
        )
        .unwrap();
        let experts = target.sample(rng, 600);
        let kde = Kde::new(experts.clone(), 0.2).unwrap();
        let prior: Gaussian = Gaussian::isotropic(array![0.0, 0.0], 16.0).unwrap();
        let start: Gaussian = Gaussian::isotropic(array![0.0, 0.0], 4.0).unwrap();
        let policy = GmmPolicy::new(Mixture::single(start));
        (prior, experts, kde, policy)
    }

    #[test]
    fn cumulative_loop_recovers_a_concentrated_target() {
        let mut rng = RngStream::new(50);
        let (prior, experts, kde, policy) = expert_setup(&mut rng);
        let mut seen = 0usize;
        let out = virl_run(
            &prior,
            &experts.view(),
            &kde,
            policy,
            &tiny_opts(),
            &mut rng,
            &mut |view| {
                assert_eq!(view.record.iteration, seen);
                assert!(view.record.ess >= 1.0);
                seen += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(seen, 4);
        assert_eq!(out.reward.depth(), 4);
        assert_eq!(out.records.len(), 4);

        let mean = out.policy.component(0).mean();
        assert!((mean[0] - 2.0).abs() < 0.6, "policy mean {mean}");
        assert!((mean[1] + 1.0).abs() < 0.6, "policy mean {mean}");

        let at_target = out.reward.evaluate(&array![2.0, -1.0].view()).unwrap();
        let far = out.reward.evaluate(&array![-4.0, 4.0].view()).unwrap();
        assert!(
            at_target > far + 2.0,
            "reward fails to separate: {at_target} vs {far}"
        );
        for r in &out.records {
            assert!(r.discriminator_loss.is_finite());
            assert!(r.expert_logit_mean_abs.unwrap().is_finite());
            assert!(!r.used_kde_fallback);
        }
    }

    #[test]
    fn impossible_ess_threshold_forces_the_kde_fallback() {
        let mut rng = RngStream::new(51);
        let (prior, experts, kde, policy) = expert_setup(&mut rng);
        let mut opts = tiny_opts();
        opts.iterations = 2;
        opts.min_ess_fraction = 2.0;
        let out = virl_run(
            &prior,
            &experts.view(),
            &kde,
            policy,
            &opts,
            &mut rng,
            &mut |_| Ok(()),
        )
        .unwrap();
        assert!(out.records.iter().all(|r| r.used_kde_fallback));
    }

    #[test]
    fn zero_iterations_returns_the_prior_bundle() {
        let mut rng = RngStream::new(52);
        let (prior, experts, kde, policy) = expert_setup(&mut rng);
        let before = policy.mixture().clone();
        let mut opts = tiny_opts();
        opts.iterations = 0;
        let mut called = false;
        let out = virl_run(
            &prior,
            &experts.view(),
            &kde,
            policy,
            &opts,
            &mut rng,
            &mut |_| {
                called = true;
                Ok(())
            },
        )
        .unwrap();
        assert!(!called);
        assert_eq!(out.reward.depth(), 0);
        assert!(out.records.is_empty());
        let drift = out.policy.component(0).kl(before.component(0)).unwrap();
        assert!(drift < 1e-15);
    }

    #[test]
    fn observer_failures_abort_the_run() {
        let mut rng = RngStream::new(53);
        let (prior, experts, kde, policy) = expert_setup(&mut rng);
        let err = virl_run(
            &prior,
            &experts.view(),
            &kde,
            policy,
            &tiny_opts(),
            &mut rng,
            &mut |_| Err(Error::format("stop")),
        );
        assert!(matches!(err, Err(Error::Format { .. })));
    }

    #[test]
    fn persistent_network_loop_learns_the_expert_density() {
        let mut rng = RngStream::new(54);
        let (_, experts, kde, policy) = expert_setup(&mut rng);
        let mut opts = tiny_opts();
        opts.iterations = 5;
        opts.epochs = 25;
        opts.batch_size = 128;
        let out = geim_run(
            &experts.view(),
            &kde,
            policy,
            &opts,
            &mut rng,
            &mut |view| {
                assert!(view.record.expert_logit_mean_abs.is_none());
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(out.reward.depth(), 1);
        assert!(matches!(out.reward.prior(), RewardPrior::Flat { dim: 2 }));

        let mean = out.policy.component(0).mean();
        assert!((mean[0] - 2.0).abs() < 0.6, "policy mean {mean}");
        let at_target = out.reward.evaluate(&array![2.0, -1.0].view()).unwrap();
        let far = out.reward.evaluate(&array![-4.0, 4.0].view()).unwrap();
        assert!(at_target > far + 1.0, "{at_target} vs {far}");
    }

    #[test]
    fn ratio_loop_moves_the_policy_and_keeps_a_mixture_bundle() {
        let mut rng = RngStream::new(55);
        let target: Gaussian = Gaussian::isotropic(array![2.5], 0.09).unwrap();
        let experts = target.sample(&mut rng, 500);
        let start: Gaussian = Gaussian::isotropic(array![0.5], 1.0).unwrap();
        let policy = GmmPolicy::new(Mixture::single(start));
        let mut opts = tiny_opts();
        opts.iterations = 9;
        opts.policy_steps = 15;
        let out = eim_run(&experts.view(), policy, &opts, &mut rng, &mut |view| {
            assert_eq!(view.record.ess, 500.0);
            Ok(())
        })
        .unwrap();
        assert_eq!(out.reward.depth(), 0);
        assert!(matches!(out.reward.prior(), RewardPrior::Mixture(_)));
        let mean = out.policy.component(0).mean();
        assert!((mean[0] - 2.5).abs() < 0.5, "policy mean {mean}");
    }
}
