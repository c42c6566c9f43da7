//! Experiment configuration: the TOML schema, in-repo presets, dotted-path
//! overrides, and validation against the tuned hyperparameter ranges.
//!
//! Every section rejects unknown keys, so a typo fails at parse time
//! instead of silently running with a default. `validate` additionally
//! enforces the ranges the hyperparameters were tuned inside; direct
//! construction in tests may leave them.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView2;

use crate::discriminator::{MlpConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use crate::error::{Error, Result};
use crate::kde::silverman_bandwidth;
use crate::methods::{RunOptions, DEFAULT_MIN_ESS_FRACTION, DEFAULT_NEGATIVES};
use crate::policy::PolicyStepConfig;
use crate::scalar::Scalar;
use crate::tasks::{
    GridWalkerTask, RandomGaussiansTask, Task, DEFAULT_ESS_BURN_IN, DEFAULT_ESS_THINNING,
    DEFAULT_EXPERT_COUNT, DEFAULT_LINE_SPACING, DEFAULT_WAYPOINT_VARIANCE,
};

/// Named configurations shipped with the crate. The `smoke-` entries are
/// minutes-scale; the rest carry the tuned full-scale settings.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "gaussians-virl-1c",
        include_str!("../presets/gaussians-virl-1c.toml"),
    ),
    (
        "gaussians-virl-10c",
        include_str!("../presets/gaussians-virl-10c.toml"),
    ),
    (
        "gaussians-geim-1c",
        include_str!("../presets/gaussians-geim-1c.toml"),
    ),
    (
        "gaussians-geim-10c",
        include_str!("../presets/gaussians-geim-10c.toml"),
    ),
    (
        "gaussians-eim-1c",
        include_str!("../presets/gaussians-eim-1c.toml"),
    ),
    (
        "gaussians-eim-10c",
        include_str!("../presets/gaussians-eim-10c.toml"),
    ),
    ("walker-virl", include_str!("../presets/walker-virl.toml")),
    ("walker-geim", include_str!("../presets/walker-geim.toml")),
    (
        "smoke-gaussians",
        include_str!("../presets/smoke-gaussians.toml"),
    ),
    ("smoke-walker", include_str!("../presets/smoke-walker.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Virl,
    Geim,
    Eim,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Virl => "virl",
            Method::Geim => "geim",
            Method::Eim => "eim",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "virl" => Ok(Method::Virl),
            "geim" => Ok(Method::Geim),
            "eim" => Ok(Method::Eim),
            other => Err(Error::config(
                "method",
                format!("unknown method {other:?}, expected virl, geim, or eim"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    RandomGaussians,
    GridWalker,
}

/// KDE bandwidth: a fixed positive value or the `"silverman"` rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Fixed(f64),
    Named(String),
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec::Named("silverman".into())
    }
}

impl BandwidthSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BandwidthSpec::Fixed(h) if h.is_finite() && *h > 0.0 => Ok(()),
            BandwidthSpec::Fixed(_) => Err(Error::config(
                "expert.bandwidth",
                "must be finite and positive",
            )),
            BandwidthSpec::Named(n) if n == "silverman" => Ok(()),
            BandwidthSpec::Named(n) => Err(Error::config(
                "expert.bandwidth",
                format!("unknown rule {n:?}, expected \"silverman\" or a number"),
            )),
        }
    }

    pub fn resolve<S: Scalar>(&self, points: &ArrayView2<S>) -> Result<S> {
        self.validate()?;
        match self {
            BandwidthSpec::Fixed(h) => Ok(S::of_f64(*h)),
            BandwidthSpec::Named(_) => silverman_bandwidth(points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Target mixture size (random-gaussians only).
    pub components: usize,
    /// Trajectory dimension (grid-walker only).
    pub dim: usize,
    /// Base seed for drawing random targets; the trial seed is added so
    /// every trial sees a fresh target.
    pub task_seed: u64,
    /// Grid-walker line spacing, in (0, 1).
    pub line_spacing: f64,
    /// Grid-walker waypoint noise variance.
    pub waypoint_variance: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::RandomGaussians,
            components: 10,
            dim: 5,
            task_seed: 0,
            line_spacing: DEFAULT_LINE_SPACING,
            waypoint_variance: DEFAULT_WAYPOINT_VARIANCE,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TaskKind::RandomGaussians if self.components == 0 => {
                Err(Error::config("task.components", "must be positive"))
            }
            TaskKind::GridWalker if self.dim == 0 => {
                Err(Error::config("task.dim", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the task for one trial.
    pub fn build<S: Scalar>(&self, trial_seed: u64) -> Result<Task<S>> {
        match self.kind {
            TaskKind::RandomGaussians => Ok(Task::RandomGaussians(RandomGaussiansTask::make(
                self.components,
                self.task_seed.wrapping_add(trial_seed),
            )?)),
            TaskKind::GridWalker => Ok(Task::GridWalker(GridWalkerTask::new(
                self.dim,
                S::of_f64(self.line_spacing),
                S::of_f64(self.waypoint_variance),
            )?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertSection {
    pub count: usize,
    pub bandwidth: BandwidthSpec,
    /// Slice-sampler burn-in per chain (grid-walker only).
    pub burn_in: usize,
    /// Slice-sampler thinning stride (grid-walker only).
    pub thinning: usize,
}

impl Default for ExpertSection {
    fn default() -> Self {
        ExpertSection {
            count: DEFAULT_EXPERT_COUNT,
            bandwidth: BandwidthSpec::default(),
            burn_in: DEFAULT_ESS_BURN_IN,
            thinning: DEFAULT_ESS_THINNING,
        }
    }
}

impl ExpertSection {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("expert.count", "must be positive"));
        }
        if self.thinning == 0 {
            return Err(Error::config("expert.thinning", "must be positive"));
        }
        self.bandwidth.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub components: usize,
    pub kl_bound: f64,
    pub weight_kl_bound: f64,
    pub surrogate_samples: usize,
    pub ridge: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        let step = PolicyStepConfig::default();
        PolicySection {
            components: 10,
            kl_bound: step.kl_bound,
            weight_kl_bound: step.weight_kl_bound,
            surrogate_samples: step.surrogate_samples,
            ridge: step.ridge,
        }
    }
}

impl PolicySection {
    pub fn step_config(&self) -> PolicyStepConfig {
        PolicyStepConfig {
            kl_bound: self.kl_bound,
            weight_kl_bound: self.weight_kl_bound,
            surrogate_samples: self.surrogate_samples,
            ridge: self.ridge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::config("policy.components", "must be positive"));
        }
        self.step_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub iterations: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub min_ess_fraction: f64,
    pub policy_steps: usize,
    pub geim_fusion_negatives: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            iterations: 10,
            negatives: DEFAULT_NEGATIVES,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            min_ess_fraction: DEFAULT_MIN_ESS_FRACTION,
            policy_steps: 1,
            geim_fusion_negatives: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub samples: usize,
    pub normalizer_samples: usize,
    pub box_negatives: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            samples: crate::eval::DEFAULT_EVAL_SAMPLES,
            normalizer_samples: crate::eval::DEFAULT_NORMALIZER_SAMPLES,
            box_negatives: crate::eval::DEFAULT_BOX_NEGATIVES,
        }
    }
}

impl EvalSection {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("eval.samples", "must be positive"));
        }
        if self.normalizer_samples == 0 {
            return Err(Error::config("eval.normalizer_samples", "must be positive"));
        }
        if self.box_negatives == 0 {
            return Err(Error::config("eval.box_negatives", "must be positive"));
        }
        Ok(())
    }
}

/// Root of the configuration tree, one experiment per file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    /// One trial per seed.
    pub seeds: Vec<u64>,
    /// Output directory; resolved by the caller when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub task: TaskConfig,
    pub expert: ExpertSection,
    pub policy: PolicySection,
    pub discriminator: MlpConfig,
    pub run: RunSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Virl,
            seeds: vec![0, 1, 2, 3, 4],
            out: None,
            task: TaskConfig::default(),
            expert: ExpertSection::default(),
            policy: PolicySection::default(),
            discriminator: MlpConfig::default(),
            run: RunSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::format(format!("config parse: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format(format!("config encode: {e}")))
    }

    pub fn preset(name: &str) -> Result<Self> {
        for (key, text) in PRESETS {
            if *key == name {
                return Self::from_toml_str(text);
            }
        }
        Err(Error::config(
            "preset",
            format!(
                "unknown preset {name:?}; available: {}",
                preset_names().join(", ")
            ),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        self.task.validate()?;
        self.expert.validate()?;
        self.policy.validate()?;
        self.discriminator.validate()?;
        self.eval.validate()?;
        self.run_options().validate()
    }

    /// Assembles the per-run options the training loops take.
    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            iterations: self.run.iterations,
            negatives: self.run.negatives,
            epochs: self.run.epochs,
            batch_size: self.run.batch_size,
            min_ess_fraction: self.run.min_ess_fraction,
            policy_steps: self.run.policy_steps,
            policy: self.policy.step_config(),
            discriminator: self.discriminator.clone(),
            geim_fusion_negatives: self.run.geim_fusion_negatives,
        }
    }

    /// Applies `key=value` overrides by dotted TOML path, re-checking the
    /// schema afterwards.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table = toml::Table::try_from(self)
            .map_err(|e| Error::format(format!("config encode: {e}")))?;
        for (key, value) in overrides {
            set_dotted(&mut table, key, value)?;
        }
        table
            .try_into()
            .map_err(|e| Error::format(format!("override produced invalid config: {e}")))
    }
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(name, _)| *name).collect()
}

fn set_dotted(table: &mut toml::Table, dotted: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(
            "override",
            format!("bad key {dotted:?}: empty path segment"),
        ));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .get_mut(*part)
            .ok_or_else(|| {
                Error::config("override", format!("no section {part:?} in {dotted:?}"))
            })?
            .as_table_mut()
            .ok_or_else(|| {
                Error::config("override", format!("{part:?} in {dotted:?} is not a section"))
            })?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Parses an override value with TOML syntax, falling back to a bare
/// string so `method=geim` works without quoting.
fn parse_value(raw: &str) -> toml::Value {
    if let Ok(t) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}
