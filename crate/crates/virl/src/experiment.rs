//! Trial orchestration: one seeded run from task construction through
//! per-iteration evaluation, plus the across-trial summary.
//!
//! Randomness is split into purpose-scoped substreams of the trial seed
//! (expert draw, training, evaluation, normalizer), so changing the
//! evaluation sample count, say, cannot silently shift the training
//! trajectory. Trials are independent and run on their own threads.

use std::collections::BTreeMap;

use crate::config::{ExperimentConfig, Method, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{
    estimate_log_normalizer, mode_representation, negative_elbo, reverse_kl, MetricSnapshot,
};
use crate::io::MetricRow;
use crate::kde::Kde;
use crate::methods::{eim_run, geim_run, virl_run, IterationRecord, RunOutcome};
use crate::mixture::Mixture;
use crate::policy::GmmPolicy;
use crate::reward::{CumulativeReward, Fusion};
use crate::rng::RngStream;
use crate::tasks::{make_expert_set_with, ExpertSet, Task};

const EXPERT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const NORMALIZER_STREAM: u64 = 4;

/// Everything one seeded run produces.
pub struct TrialResult {
    pub seed: u64,
    pub task_id: String,
    pub reward: CumulativeReward<f64>,
    pub policy: Mixture<f64>,
    pub records: Vec<IterationRecord>,
    pub snapshots: Vec<MetricSnapshot>,
    pub experts: ExpertSet<f64>,
    /// Log-normalizer the reverse KL used; zero for normalized targets.
    pub log_z: f64,
}

/// Draws the demonstration set a trial with this seed trains on. The
/// stream only depends on the seed, so a set exported up front matches
/// the one the run would draw.
pub fn draw_experts(
    config: &ExperimentConfig,
    task: &Task<f64>,
    seed: u64,
) -> Result<ExpertSet<f64>> {
    let mut rng = RngStream::new(seed).substream(EXPERT_STREAM);
    make_expert_set_with(
        task,
        config.expert.count,
        config.expert.burn_in,
        config.expert.thinning,
        &mut rng,
    )
}

/// The trial's log-normalizer: zero for normalized targets, otherwise one
/// importance estimate from the prior/demonstration fusion. Computed once
/// per seed so every method and iteration compares against the same
/// constant.
pub fn trial_log_normalizer(
    config: &ExperimentConfig,
    task: &Task<f64>,
    kde: &Kde<f64>,
    seed: u64,
) -> Result<f64> {
    if task.is_normalized() {
        return Ok(0.0);
    }
    let prior = task.reward_prior();
    let fusion = Fusion::new(&prior, kde)?;
    estimate_log_normalizer(
        task,
        &fusion,
        config.eval.normalizer_samples,
        &mut RngStream::new(seed).substream(NORMALIZER_STREAM),
    )
}

/// Runs one seeded trial of the configured method.
pub fn run_trial(config: &ExperimentConfig, seed: u64) -> Result<TrialResult> {
    config.validate()?;
    let root = RngStream::new(seed);
    let task: Task<f64> = config.task.build(seed)?;

    let experts = draw_experts(config, &task, seed)?;
    let bandwidth = config.expert.bandwidth.resolve(&experts.samples.view())?;
    let kde = Kde::new(experts.samples.clone(), bandwidth)?;

    let prior = task.reward_prior();
    let mut train_rng = root.substream(TRAIN_STREAM);
    let policy = GmmPolicy::initial(&prior, config.policy.components, &mut train_rng)?;

    let log_z = trial_log_normalizer(config, &task, &kde, seed)?;

    let mut eval_rng = root.substream(EVAL_STREAM);
    let mut snapshots: Vec<MetricSnapshot> = Vec::with_capacity(config.run.iterations);
    let centers = task.mode_centers();
    let halfwidth = task.box_halfwidth();
    let eval_samples = config.eval.samples;
    let box_negatives = config.eval.box_negatives;
    let task_ref = &task;
    let mut observe = |view: crate::methods::IterationView<'_, f64>| -> Result<()> {
        let kl = reverse_kl(view.policy, task_ref, log_z, eval_samples, &mut eval_rng)?;
        let elbo = negative_elbo(view.policy, view.reward, eval_samples, &mut eval_rng)?;
        let mode = match (&centers, halfwidth) {
            (Some(c), Some(hw)) => Some(mode_representation(
                view.reward,
                &c.view(),
                hw,
                box_negatives,
                &mut eval_rng,
            )?),
            _ => None,
        };
        snapshots.push(MetricSnapshot::new(
            view.record.iteration,
            kl,
            elbo,
            mode,
            view.record.ess,
        ));
        Ok(())
    };

    let opts = config.run_options();
    let outcome: RunOutcome<f64> = match config.method {
        Method::Virl => virl_run(
            &prior,
            &experts.samples.view(),
            &kde,
            policy,
            &opts,
            &mut train_rng,
            &mut observe,
        )?,
        Method::Geim => geim_run(
            &experts.samples.view(),
            &kde,
            policy,
            &opts,
            &mut train_rng,
            &mut observe,
        )?,
        Method::Eim => eim_run(
            &experts.samples.view(),
            policy,
            &opts,
            &mut train_rng,
            &mut observe,
        )?,
    };
    drop(observe);

    Ok(TrialResult {
        seed,
        task_id: task.id(),
        reward: outcome.reward,
        policy: outcome.policy,
        records: outcome.records,
        snapshots,
        experts,
        log_z,
    })
}

/// Runs every configured seed, one thread per trial, results in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    config.validate()?;
    let mut results: Vec<Option<Result<TrialResult>>> =
        (0..config.seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for &seed in &config.seeds {
            handles.push(scope.spawn(move || run_trial(config, seed)));
        }
        for (slot, handle) in results.iter_mut().zip(handles) {
            *slot = Some(handle.join().unwrap_or_else(|_| {
                Err(Error::format("trial thread panicked"))
            }));
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn task_kind_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::RandomGaussians => "random-gaussians",
        TaskKind::GridWalker => "grid-walker",
    }
}

/// Task size reported in metric rows: target mixture components for the
/// random-Gaussians task, trajectory dimension for the walker.
pub fn task_size(config: &ExperimentConfig) -> usize {
    match config.task.kind {
        TaskKind::RandomGaussians => config.task.components,
        TaskKind::GridWalker => config.task.dim,
    }
}

/// Flattens one trial into metric rows, one row per metric per iteration.
pub fn metric_rows(config: &ExperimentConfig, trial: &TrialResult) -> Vec<MetricRow> {
    let method = config.method.to_string();
    let task = task_kind_name(config.task.kind).to_string();
    let size = task_size(config);
    let components = config.policy.components;
    let mut rows = Vec::new();
    let mut push = |iteration: usize, metric: &str, value: f64, stderr: f64| {
        rows.push(MetricRow {
            method: method.clone(),
            task: task.clone(),
            size,
            components,
            seed: trial.seed,
            iteration,
            metric: metric.to_string(),
            value,
            stderr,
        });
    };
    for (record, snap) in trial.records.iter().zip(&trial.snapshots) {
        let i = record.iteration;
        push(i, "reverse_kl", snap.reverse_kl.value, snap.reverse_kl.stderr);
        push(i, "neg_elbo", snap.neg_elbo.value, snap.neg_elbo.stderr);
        push(i, "ess", record.ess, 0.0);
        push(i, "disc_loss", record.discriminator_loss, 0.0);
        push(
            i,
            "kde_fallback",
            if record.used_kde_fallback { 1.0 } else { 0.0 },
            0.0,
        );
        if let Some(v) = record.expert_logit_mean_abs {
            push(i, "expert_logit_mean_abs", v, 0.0);
        }
        if let Some(mode) = &snap.mode_score {
            push(i, "mode_score_mean", mode.mean(), 0.0);
            push(i, "mode_score_min", mode.min_center_score(), 0.0);
        }
    }
    rows
}

/// One cell of the aggregated report.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub task: String,
    pub size: usize,
    pub components: usize,
    pub metric: String,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
}

/// Aggregates metric rows into the published table shape: per seed, the
/// mean from the best iteration onward; across seeds, mean and standard
/// deviation. All rows must come from one task kind.
pub fn summarize(rows: &[MetricRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput {
            what: "metric records",
        });
    }
    let first_task = &rows[0].task;
    if rows.iter().any(|r| &r.task != first_task) {
        return Err(Error::format(
            "metric records mix different tasks; report them separately",
        ));
    }
    // (method, size, components, metric) -> seed -> (iteration, value)
    let mut cells: BTreeMap<(String, usize, usize, String), BTreeMap<u64, Vec<(usize, f64)>>> =
        BTreeMap::new();
    for r in rows {
        cells
            .entry((r.method.clone(), r.size, r.components, r.metric.clone()))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push((r.iteration, r.value));
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((method, size, components, metric), seeds) in cells {
        let mut traces = Vec::with_capacity(seeds.len());
        for (_, mut trace) in seeds {
            trace.sort_by_key(|(i, _)| *i);
            traces.push(trace.into_iter().map(|(_, v)| v).collect::<Vec<_>>());
        }
        let trials = traces.len();
        let (mean, std) = crate::eval::aggregate_trials(&traces)?;
        out.push(SummaryRow {
            method,
            task: first_task.clone(),
            size,
            components,
            metric,
            trials,
            mean,
            std,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RewardPrior;

    fn smoke(method: &str) -> ExperimentConfig {
        ExperimentConfig::preset("smoke-gaussians")
            .unwrap()
            .with_overrides(&[("method".into(), method.into())])
            .unwrap()
    }

    #[test]
    fn a_trial_runs_end_to_end_and_is_deterministic() {
        let config = smoke("virl");
        let a = run_trial(&config, 0).unwrap();
        assert_eq!(a.records.len(), 3);
        assert_eq!(a.snapshots.len(), 3);
        assert_eq!(a.reward.depth(), 3);
        assert_eq!(a.log_z, 0.0);
        assert!(a.task_id.starts_with("random-gaussians"));
        for snap in &a.snapshots {
            assert!(snap.reverse_kl.value.is_finite());
            assert!(snap.neg_elbo.value.is_finite());
            assert!(snap.mode_score.is_none());
        }

        let b = run_trial(&config, 0).unwrap();
        let ra = metric_rows(&config, &a);
        let rb = metric_rows(&config, &b);
        assert_eq!(ra, rb);
        assert!(!ra.is_empty());
    }

    #[test]
    fn walker_trials_score_modes_and_estimate_the_normalizer() {
        let config = ExperimentConfig::preset("smoke-walker").unwrap();
        let trial = run_trial(&config, 1).unwrap();
        assert_ne!(trial.log_z, 0.0);
        assert!(trial.task_id.starts_with("grid-walker"));
        let mode = trial.snapshots[0].mode_score.as_ref().unwrap();
        assert_eq!(mode.scores.len(), 4);
        let rows = metric_rows(&config, &trial);
        assert!(rows.iter().any(|r| r.metric == "mode_score_mean"));
        assert!(rows.iter().any(|r| r.metric == "mode_score_min"));
        assert_eq!(rows[0].task, "grid-walker");
        assert_eq!(rows[0].size, 2);
    }

    #[test]
    fn each_method_leaves_its_own_bundle_shape() {
        let virl = run_trial(&smoke("virl"), 2).unwrap();
        assert!(matches!(virl.reward.prior(), RewardPrior::Gaussian(_)));
        assert_eq!(virl.reward.depth(), 3);

        let geim = run_trial(&smoke("geim"), 2).unwrap();
        assert!(matches!(geim.reward.prior(), RewardPrior::Flat { .. }));
        assert_eq!(geim.reward.depth(), 1);

        let eim = run_trial(&smoke("eim"), 2).unwrap();
        assert!(matches!(eim.reward.prior(), RewardPrior::Mixture(_)));
        assert_eq!(eim.reward.depth(), 0);
    }

    #[test]
    fn experiments_fan_out_over_seeds() {
        let mut config = smoke("virl");
        config.seeds = vec![0, 1];
        let results = run_experiment(&config).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].seed, 0);
        assert_eq!(results[1].seed, 1);
        // Fresh target per trial seed.
        assert_ne!(results[0].task_id, results[1].task_id);
    }

    #[test]
    fn summaries_follow_the_best_to_final_rule() {
        let mk = |seed: u64, iteration: usize, value: f64| MetricRow {
            method: "virl".into(),
            task: "random-gaussians".into(),
            size: 10,
            components: 10,
            seed,
            iteration,
            metric: "reverse_kl".into(),
            value,
            stderr: 0.0,
        };
        let rows = vec![
            mk(0, 0, 3.0),
            mk(0, 1, 1.0),
            mk(0, 2, 2.0),
            mk(1, 0, 5.0),
            mk(1, 1, 4.0),
            mk(1, 2, 6.0),
        ];
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.len(), 1);
        let row = &summary[0];
        assert_eq!(row.trials, 2);
        assert!((row.mean - 3.25).abs() < 1e-12);
        assert!((row.std - 1.75 * 2f64.sqrt()).abs() < 1e-12);

        let mut mixed = rows.clone();
        mixed.push(MetricRow {
            task: "grid-walker".into(),
            ..rows[0].clone()
        });
        assert!(summarize(&mixed).is_err());
        assert!(summarize(&[]).is_err());
    }
}
