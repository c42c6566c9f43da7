//! Experiment front end: seeded runs, inference on saved rewards, metric
//! aggregation, and expert-set generation.
//!
//! Output roots resolve in order: `--out`, the config's `out` field, the
//! `VIRL_OUT_ROOT` environment variable, then `./runs`. Every run leaves a
//! resolved config and per-seed manifests behind, which is enough to
//! reproduce it bit for bit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use virl::config::{preset_names, ExperimentConfig};
use virl::experiment::{
    draw_experts, metric_rows, run_trial, summarize, task_kind_name, task_size,
    trial_log_normalizer,
};
use virl::io::{
    load_reward_bundle, read_metrics_csv, save_expert_set, save_policy, save_reward_bundle,
    write_manifest, write_metrics_csv, MetricRow, RunManifest,
};
use virl::policy::GmmPolicy;
use virl::rng::RngStream;

const OUT_ROOT_ENV: &str = "VIRL_OUT_ROOT";

#[derive(Parser)]
#[command(name = "virl", version, about = "Reward recovery from demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment across its seeds.
    Run(RunArgs),
    /// Train a fresh policy on a saved reward bundle.
    Infer(InferArgs),
    /// Aggregate run directories into a summary table.
    Report(ReportArgs),
    /// Draw expert demonstrations and write them as CSV.
    GenExperts(GenExpertsArgs),
    /// List the presets shipped with the tool.
    Presets,
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a TOML experiment config.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of an in-repo preset; see `virl presets`.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Override one config value by dotted path, e.g. task.components=5.
    /// May be given multiple times.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigSource {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(path), None) => ExperimentConfig::from_path(path)
                .with_context(|| format!("reading {}", path.display()))?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => bail!("pass --config FILE or --preset NAME"),
            (Some(_), Some(_)) => unreachable!("clap forbids this combination"),
        };
        let mut pairs = Vec::with_capacity(self.overrides.len());
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("--override needs KEY=VALUE, got {item:?}"))?;
            pairs.push((key.to_string(), value.to_string()));
        }
        Ok(base.with_overrides(&pairs)?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Exact output directory for this run.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the configured outer iteration count.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    /// Reward bundle written by `run`.
    bundle: PathBuf,
    /// Mixture size of the inference policy.
    #[arg(short = 'k', long)]
    components: usize,
    /// Trust-region steps to train it for.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default: `infer-k<K>-seed<S>` beside the bundle).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories produced by `run` (or single seed directories).
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    /// Write the summary CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenExpertsArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Seed for the task and the draw (default: the config's first seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of demonstrations (default: the config's expert count).
    #[arg(long)]
    count: Option<usize>,
    /// Output CSV path; a TOML sidecar is written next to it.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Report(args) => cmd_report(args),
        Command::GenExperts(args) => cmd_gen_experts(args),
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Picks the run directory: explicit flag, else a fresh name under the
/// output root.
fn resolve_run_dir(explicit: Option<PathBuf>, config: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    if let Some(dir) = explicit {
        return Ok(dir);
    }
    let root = config
        .out
        .clone()
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let stem = format!(
        "{}-{}-{}-k{}",
        config.method,
        task_kind_name(config.task.kind),
        task_size(config),
        config.policy.components
    );
    let first = root.join(&stem);
    if !first.exists() {
        return Ok(first);
    }
    for n in 2..1000 {
        let candidate = root.join(format!("{stem}-{n}"));
        if !candidate.exists() {
            return Ok(candidate);
        }
    }
    bail!("no free run directory under {} for {stem}", root.display());
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = args.source.load()?;
    if let Some(n) = args.iterations {
        config.run.iterations = n;
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;

    let run_dir = resolve_run_dir(args.out, &config)?;
    std::fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating {}", run_dir.display()))?;
    std::fs::write(run_dir.join("resolved-config.toml"), config.to_toml_string()?)?;

    for &seed in &config.seeds {
        let started = Instant::now();
        let trial = run_trial(&config, seed)
            .with_context(|| format!("seed {seed} failed"))?;
        let seed_dir = run_dir.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&seed_dir)?;

        write_metrics_csv(&seed_dir.join("metrics.csv"), &metric_rows(&config, &trial))?;
        save_reward_bundle(&seed_dir.join("reward.bin"), &trial.reward, &config, seed)?;
        save_policy(&seed_dir.join("policy.bin"), &trial.policy)?;
        save_expert_set(&seed_dir.join("experts.csv"), &trial.experts)?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            method: config.method.to_string(),
            task_id: trial.task_id.clone(),
            seed,
            artifacts: vec![
                "metrics.csv".into(),
                "reward.bin".into(),
                "policy.bin".into(),
                "experts.csv".into(),
                "experts.toml".into(),
            ],
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        write_manifest(&seed_dir.join("manifest.toml"), &manifest)?;

        let kl = trial
            .snapshots
            .last()
            .map(|s| format!("{:.4}", s.reverse_kl.value))
            .unwrap_or_else(|| "n/a".into());
        eprintln!(
            "seed {seed}: {} iterations, final reverse KL {kl}, {:.1}s",
            trial.records.len(),
            started.elapsed().as_secs_f64()
        );
    }
    println!("{}", run_dir.display());
    Ok(())
}

fn cmd_infer(args: InferArgs) -> anyhow::Result<()> {
    let loaded = load_reward_bundle(&args.bundle)
        .with_context(|| format!("loading {}", args.bundle.display()))?;
    if args.components == 0 {
        bail!("--components must be positive");
    }
    let config = loaded.config;
    let task: virl::tasks::Task<f64> = config.task.build(loaded.seed)?;
    let prior = task.reward_prior();

    let mut rng = RngStream::new(args.seed);
    let started = Instant::now();
    let policy = GmmPolicy::fit_inference_policy(
        &loaded.reward,
        &prior,
        args.components,
        args.steps,
        &config.policy.step_config(),
        &mut rng,
    )?;
    let policy = policy.into_mixture();

    let out_dir = args.out.unwrap_or_else(|| {
        let parent = args.bundle.parent().unwrap_or(Path::new("."));
        parent.join(format!("infer-k{}-seed{}", args.components, args.seed))
    });
    std::fs::create_dir_all(&out_dir)?;
    save_policy(&out_dir.join("policy.bin"), &policy)?;

    // Final-policy metrics against the bundle's own task instance.
    let mut eval_rng = rng.substream(1);
    let log_z = trial_log_z(&config, &task, loaded.seed)?;
    let kl = virl::eval::reverse_kl(&policy, &task, log_z, config.eval.samples, &mut eval_rng)?;
    let elbo =
        virl::eval::negative_elbo(&policy, &loaded.reward, config.eval.samples, &mut eval_rng)?;
    let row = |metric: &str, value: f64, stderr: f64| MetricRow {
        method: format!("{}+infer", config.method),
        task: task_kind_name(config.task.kind).into(),
        size: task_size(&config),
        components: args.components,
        seed: args.seed,
        iteration: args.steps,
        metric: metric.into(),
        value,
        stderr,
    };
    write_metrics_csv(
        &out_dir.join("metrics.csv"),
        &[
            row("reverse_kl", kl.value, kl.stderr),
            row("neg_elbo", elbo.value, elbo.stderr),
        ],
    )?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        method: format!("{}+infer", config.method),
        task_id: task.id(),
        seed: args.seed,
        artifacts: vec!["policy.bin".into(), "metrics.csv".into()],
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&out_dir.join("manifest.toml"), &manifest)?;
    eprintln!(
        "inference policy: reverse KL {:.4} after {} steps, {:.1}s",
        kl.value,
        args.steps,
        started.elapsed().as_secs_f64()
    );
    println!("{}", out_dir.display());
    Ok(())
}

/// Recomputes the trial's log-normalizer the same way `run` did, so infer
/// metrics are comparable with the run's own.
fn trial_log_z(
    config: &ExperimentConfig,
    task: &virl::tasks::Task<f64>,
    trial_seed: u64,
) -> anyhow::Result<f64> {
    if task.is_normalized() {
        return Ok(0.0);
    }
    let experts = draw_experts(config, task, trial_seed)?;
    let bandwidth = config.expert.bandwidth.resolve(&experts.samples.view())?;
    let kde = virl::kde::Kde::new(experts.samples, bandwidth)?;
    Ok(trial_log_normalizer(config, task, &kde, trial_seed)?)
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let mut rows: Vec<MetricRow> = Vec::new();
    for dir in &args.run_dirs {
        let mut found = false;
        for path in metric_files(dir)? {
            rows.extend(read_metrics_csv(&path)?);
            found = true;
        }
        if !found {
            bail!("no metric records under {}", dir.display());
        }
    }
    let summary = summarize(&rows)?;
    let mut text = String::from("method,task,size,components,metric,trials,mean,std\n");
    for r in &summary {
        use std::fmt::Write as _;
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.method, r.task, r.size, r.components, r.metric, r.trials, r.mean, r.std
        )
        .expect("write to string");
    }
    match args.out {
        Some(path) => {
            std::fs::write(&path, text)?;
            eprintln!("wrote {} summary rows", summary.len());
            println!("{}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Finds metrics.csv files directly in `dir` or one level down in its
/// seed directories, in name order.
fn metric_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let direct = dir.join("metrics.csv");
    if direct.is_file() {
        out.push(direct);
    }
    if dir.is_dir() {
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let nested = sub.join("metrics.csv");
            if nested.is_file() {
                out.push(nested);
            }
        }
    }
    Ok(out)
}

fn cmd_gen_experts(args: GenExpertsArgs) -> anyhow::Result<()> {
    let mut config = args.source.load()?;
    if let Some(count) = args.count {
        config.expert.count = count;
    }
    config.validate()?;
    let seed = args
        .seed
        .or_else(|| config.seeds.first().copied())
        .expect("validation requires a seed");

    let task: virl::tasks::Task<f64> = config.task.build(seed)?;
    // Same stream layout as `run`, so the CSV matches what a run with this
    // seed would train on.
    let mut expert_rng = RngStream::new(seed).substream(1);
    let set = make_expert_set_with(
        &task,
        config.expert.count,
        config.expert.burn_in,
        config.expert.thinning,
        &mut expert_rng,
    )?;

    let out = args.out.unwrap_or_else(|| {
        PathBuf::from(format!(
            "experts-{}-{}-seed{}.csv",
            task_kind_name(config.task.kind),
            task_size(&config),
            seed
        ))
    });
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_expert_set(&out, &set)?;
    eprintln!("{} demonstrations from {}", set.len(), set.task_id);
    println!("{}", out.display());
    Ok(())
}
