//! Artifact persistence.
//!
//! Binary artifacts (discriminators, reward bundles, policies) share one
//! container: magic, format version, a kind tag, the payload, and a
//! SHA-256 of the payload. Loading verifies all four before touching the
//! payload, so a truncated or bit-flipped file fails loudly instead of
//! deserializing into something plausible.
//!
//! Text artifacts stay human-readable: expert sets as CSV with a TOML
//! sidecar, metrics as CSV, manifests and resolved configs as TOML.
//! Floats are written with the shortest representation that parses back
//! to the identical bits, which is what makes byte-identical reruns a
//! meaningful determinism check.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::config::ExperimentConfig;
use crate::discriminator::{Discriminator, MlpConfig};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::mixture::Mixture;
use crate::reward::{CumulativeReward, RewardPrior};
use crate::rng::RngStream;
use crate::tasks::ExpertSet;

pub const ARTIFACT_MAGIC: &[u8; 8] = b"VIRLART\0";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ArtifactKind {
    Discriminator = 1,
    RewardBundle = 2,
    Policy = 3,
}

impl ArtifactKind {
    fn name(self) -> &'static str {
        match self {
            ArtifactKind::Discriminator => "discriminator",
            ArtifactKind::RewardBundle => "reward bundle",
            ArtifactKind::Policy => "policy",
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(ArtifactKind::Discriminator),
            2 => Some(ArtifactKind::RewardBundle),
            3 => Some(ArtifactKind::Policy),
            _ => None,
        }
    }
}

fn write_artifact(path: &Path, kind: ArtifactKind, payload: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(24 + payload.len() + 32);
    bytes.extend_from_slice(ARTIFACT_MAGIC);
    bytes.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(kind as u32).to_le_bytes());
    bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    bytes.extend_from_slice(payload);
    bytes.extend_from_slice(&Sha256::digest(payload));
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_artifact(path: &Path, kind: ArtifactKind) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 24 + 32 {
        return Err(Error::format(format!(
            "{}: too short for an artifact container",
            path.display()
        )));
    }
    if &bytes[..8] != ARTIFACT_MAGIC {
        return Err(Error::format(format!(
            "{}: not an artifact file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != ARTIFACT_VERSION {
        return Err(Error::format(format!(
            "{}: artifact version {version}, expected {ARTIFACT_VERSION}",
            path.display()
        )));
    }
    let tag = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let found = ArtifactKind::from_tag(tag)
        .ok_or_else(|| Error::format(format!("{}: unknown artifact tag {tag}", path.display())))?;
    if found != kind {
        return Err(Error::format(format!(
            "{}: holds a {}, expected a {}",
            path.display(),
            found.name(),
            kind.name()
        )));
    }
    let len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if bytes.len() != 24 + len + 32 {
        return Err(Error::format(format!(
            "{}: payload length mismatch",
            path.display()
        )));
    }
    let payload = &bytes[24..24 + len];
    let digest = Sha256::digest(payload);
    if digest[..] != bytes[24 + len..] {
        return Err(Error::format(format!(
            "{}: checksum mismatch, artifact is corrupt",
            path.display()
        )));
    }
    Ok(payload.to_vec())
}

fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    bincode::serialize(value).map_err(|e| Error::format(format!("artifact encode: {e}")))
}

fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<T> {
    bincode::deserialize(bytes).map_err(|e| Error::format(format!("{what} decode: {e}")))
}

#[derive(Serialize, Deserialize)]
struct GaussianState {
    mean: Vec<f64>,
    chol: Vec<f64>,
}

impl GaussianState {
    fn of(g: &Gaussian<f64>) -> Self {
        GaussianState {
            mean: g.mean().to_vec(),
            chol: g.chol().iter().cloned().collect(),
        }
    }

    fn build(self) -> Result<Gaussian<f64>> {
        let d = self.mean.len();
        let chol = Array2::from_shape_vec((d, d), self.chol)
            .map_err(|_| Error::format("gaussian state: cholesky shape"))?;
        Gaussian::new(Array1::from_vec(self.mean), chol)
    }
}

#[derive(Serialize, Deserialize)]
struct MixtureState {
    log_weights: Vec<f64>,
    components: Vec<GaussianState>,
}

impl MixtureState {
    fn of(m: &Mixture<f64>) -> Self {
        MixtureState {
            log_weights: m.log_weights().to_vec(),
            components: m.components().iter().map(GaussianState::of).collect(),
        }
    }

    fn build(self) -> Result<Mixture<f64>> {
        let comps = self
            .components
            .into_iter()
            .map(GaussianState::build)
            .collect::<Result<Vec<_>>>()?;
        Mixture::from_normalized_log_weights(Array1::from_vec(self.log_weights), comps)
    }
}

#[derive(Serialize, Deserialize)]
struct DiscriminatorState {
    config: MlpConfig,
    input_dim: usize,
    params: Vec<f64>,
}

impl DiscriminatorState {
    fn of(disc: &Discriminator<f64>) -> Self {
        DiscriminatorState {
            config: disc.config().clone(),
            input_dim: disc.input_dim(),
            params: disc.export_state(),
        }
    }

    fn build(self) -> Result<Discriminator<f64>> {
        let mut disc = Discriminator::new(self.input_dim, self.config, &mut RngStream::new(0))?;
        disc.import_state(&self.params)?;
        disc.set_eval();
        Ok(disc)
    }
}

#[derive(Serialize, Deserialize)]
enum PriorState {
    Gaussian(GaussianState),
    Mixture(MixtureState),
    Flat { dim: usize },
}

#[derive(Serialize, Deserialize)]
struct RewardBundleState {
    prior: PriorState,
    stack: Vec<DiscriminatorState>,
    config_toml: String,
    seed: u64,
}

/// A reward bundle restored from disk, with the provenance stored beside it.
pub struct LoadedBundle {
    pub reward: CumulativeReward<f64>,
    pub config: ExperimentConfig,
    pub seed: u64,
}

pub fn save_discriminator(path: &Path, disc: &Discriminator<f64>) -> Result<()> {
    write_artifact(
        path,
        ArtifactKind::Discriminator,
        &encode(&DiscriminatorState::of(disc))?,
    )
}

pub fn load_discriminator(path: &Path) -> Result<Discriminator<f64>> {
    let bytes = read_artifact(path, ArtifactKind::Discriminator)?;
    decode::<DiscriminatorState>(&bytes, "discriminator")?.build()
}

pub fn save_reward_bundle(
    path: &Path,
    reward: &CumulativeReward<f64>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<()> {
    let prior = match reward.prior() {
        RewardPrior::Gaussian(g) => PriorState::Gaussian(GaussianState::of(g)),
        RewardPrior::Mixture(m) => PriorState::Mixture(MixtureState::of(m)),
        RewardPrior::Flat { dim } => PriorState::Flat { dim: *dim },
    };
    let state = RewardBundleState {
        prior,
        stack: reward.stack().iter().map(DiscriminatorState::of).collect(),
        config_toml: config.to_toml_string()?,
        seed,
    };
    write_artifact(path, ArtifactKind::RewardBundle, &encode(&state)?)
}

pub fn load_reward_bundle(path: &Path) -> Result<LoadedBundle> {
    let bytes = read_artifact(path, ArtifactKind::RewardBundle)?;
    let state: RewardBundleState = decode(&bytes, "reward bundle")?;
    let prior = match state.prior {
        PriorState::Gaussian(g) => RewardPrior::Gaussian(g.build()?),
        PriorState::Mixture(m) => RewardPrior::Mixture(m.build()?),
        PriorState::Flat { dim } => RewardPrior::Flat { dim },
    };
    let mut reward = CumulativeReward::new(prior);
    for disc in state.stack {
        reward.push(disc.build()?)?;
    }
    Ok(LoadedBundle {
        reward,
        config: ExperimentConfig::from_toml_str(&state.config_toml)?,
        seed: state.seed,
    })
}

pub fn save_policy(path: &Path, policy: &Mixture<f64>) -> Result<()> {
    write_artifact(path, ArtifactKind::Policy, &encode(&MixtureState::of(policy))?)
}

pub fn load_policy(path: &Path) -> Result<Mixture<f64>> {
    let bytes = read_artifact(path, ArtifactKind::Policy)?;
    decode::<MixtureState>(&bytes, "policy")?.build()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpertSidecar {
    task_id: String,
    sampler_id: String,
    seed: u64,
    rows: usize,
    cols: usize,
}

fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("toml")
}

/// Writes demonstrations as CSV plus a TOML sidecar holding provenance.
pub fn save_expert_set(csv_path: &Path, set: &ExpertSet<f64>) -> Result<()> {
    let mut text = String::new();
    for row in set.samples.rows() {
        let mut first = true;
        for v in row {
            if !first {
                text.push(',');
            }
            write!(text, "{v}").expect("write to string");
            first = false;
        }
        text.push('\n');
    }
    std::fs::write(csv_path, text)?;
    let sidecar = ExpertSidecar {
        task_id: set.task_id.clone(),
        sampler_id: set.sampler_id.clone(),
        seed: set.seed,
        rows: set.samples.nrows(),
        cols: set.samples.ncols(),
    };
    let toml = toml::to_string_pretty(&sidecar)
        .map_err(|e| Error::format(format!("expert sidecar encode: {e}")))?;
    std::fs::write(sidecar_path(csv_path), toml)?;
    Ok(())
}

pub fn load_expert_set(csv_path: &Path) -> Result<ExpertSet<f64>> {
    let sidecar_text = std::fs::read_to_string(sidecar_path(csv_path))?;
    let sidecar: ExpertSidecar = toml::from_str(&sidecar_text)
        .map_err(|e| Error::format(format!("expert sidecar parse: {e}")))?;
    let text = std::fs::read_to_string(csv_path)?;
    let mut values = Vec::with_capacity(sidecar.rows * sidecar.cols);
    for (i, line) in text.lines().enumerate() {
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(format!("expert csv line {}: bad number {field:?}", i + 1))
            })?;
            values.push(v);
        }
        if values.len() - before != sidecar.cols {
            return Err(Error::format(format!(
                "expert csv line {}: {} fields, sidecar says {}",
                i + 1,
                values.len() - before,
                sidecar.cols
            )));
        }
    }
    if values.len() != sidecar.rows * sidecar.cols {
        return Err(Error::format(format!(
            "expert csv holds {} rows, sidecar says {}",
            values.len() / sidecar.cols.max(1),
            sidecar.rows
        )));
    }
    let samples = Array2::from_shape_vec((sidecar.rows, sidecar.cols), values)
        .expect("length checked above");
    Ok(ExpertSet {
        samples,
        task_id: sidecar.task_id,
        sampler_id: sidecar.sampler_id,
        seed: sidecar.seed,
    })
}

pub const METRICS_HEADER: &str = "method,task,size,components,seed,iteration,metric,value,stderr";

/// One metric observation; `size` is the task size (mixture components or
/// walker dimension) and `components` the policy mixture size.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub task: String,
    pub size: usize,
    pub components: usize,
    pub seed: u64,
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for r in rows {
        for field in [&r.method, &r.task, &r.metric] {
            if field.contains(',') || field.contains('\n') {
                return Err(Error::format(format!(
                    "metric field {field:?} needs quoting, which this schema forbids"
                )));
            }
        }
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            r.method, r.task, r.size, r.components, r.seed, r.iteration, r.metric, r.value,
            r.stderr
        )
        .expect("write to string");
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        _ => {
            return Err(Error::format(format!(
                "{}: missing metrics header",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::format(format!(
                "{} line {}: {} fields, expected 9",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::format(format!("{} line {}: bad {what}", path.display(), i + 2))
        };
        rows.push(MetricRow {
            method: fields[0].to_string(),
            task: fields[1].to_string(),
            size: fields[2].parse().map_err(|_| parse_err("size"))?,
            components: fields[3].parse().map_err(|_| parse_err("components"))?,
            seed: fields[4].parse().map_err(|_| parse_err("seed"))?,
            iteration: fields[5].parse().map_err(|_| parse_err("iteration"))?,
            metric: fields[6].to_string(),
            value: fields[7].parse().map_err(|_| parse_err("value"))?,
            stderr: fields[8].parse().map_err(|_| parse_err("stderr"))?,
        });
    }
    Ok(rows)
}

/// Everything needed to reproduce one trial: the resolved config is
/// written beside it as `resolved-config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub method: String,
    pub task_id: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::format(format!("manifest parse: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    
    use ndarray::array;

    fn trained_disc(seed: u64) -> Discriminator<f64> {
        let cfg = MlpConfig {
            layers: 2,
            layer_size: 8,
            batch_norm: true,
            learning_rate: 1e-3,
            dropout: 0.0,
            l2: 1e-4,
        };
        let mut rng = RngStream::new(seed);
        let pos = Gaussian::<f64>::standard(2).sample(&mut rng, 64);
        let neg = Gaussian::<f64>::isotropic(array![1.5, 0.0], 1.0)
            .unwrap()
            .sample(&mut rng, 64);
        let w = Array1::from_elem(64, 1.0 / 64.0);
        let disc = Discriminator::new(2, cfg, &mut rng).unwrap();
        disc.fit(&pos.view(), &neg.view(), &w.view(), 3, 32, &mut rng)
            .unwrap()
    }

    #[test]
    fn discriminator_artifacts_round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.bin");
        let disc = trained_disc(1);
        save_discriminator(&path, &disc).unwrap();
        let back = load_discriminator(&path).unwrap();
        assert_eq!(back.config(), disc.config());
        assert_eq!(back.input_dim(), 2);
        let xs = Gaussian::<f64>::standard(2).sample(&mut RngStream::new(2), 32);
        let a = disc.logit_batch(&xs.view()).unwrap();
        let b = back.logit_batch(&xs.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn reward_bundles_round_trip_with_their_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reward.bin");
        let prior = RewardPrior::Mixture(
            Mixture::new(
                &[0.3, 0.7],
                vec![
                    Gaussian::standard(2),
                    Gaussian::isotropic(array![2.0, -1.0], 0.5).unwrap(),
                ],
            )
            .unwrap(),
        );
        let mut reward = CumulativeReward::new(prior);
        reward.push(trained_disc(3)).unwrap();
        reward.push(trained_disc(4)).unwrap();
        let config = ExperimentConfig::preset("smoke-gaussians").unwrap();
        save_reward_bundle(&path, &reward, &config, 17).unwrap();

        let loaded = load_reward_bundle(&path).unwrap();
        assert_eq!(loaded.seed, 17);
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.reward.depth(), 2);
        let xs = Gaussian::<f64>::standard(2).sample(&mut RngStream::new(5), 16);
        let a = reward.evaluate_batch(&xs.view()).unwrap();
        let b = loaded.reward.evaluate_batch(&xs.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn policies_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        let policy = Mixture::new(
            &[0.25, 0.75],
            vec![
                Gaussian::from_covariance(
                    array![1.0, 2.0],
                    &array![[1.2, 0.3], [0.3, 0.9]].view(),
                )
                .unwrap(),
                Gaussian::standard(2),
            ],
        )
        .unwrap();
        save_policy(&path, &policy).unwrap();
        let back = load_policy(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in policy.log_weights().iter().zip(back.log_weights().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for k in 0..2 {
            let (pa, pb) = (policy.component(k), back.component(k));
            for (a, b) in pa.mean().iter().zip(pb.mean().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in pa.chol().iter().zip(pb.chol().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_artifacts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let policy = Mixture::single(Gaussian::<f64>::standard(1));
        save_policy(&path, &policy).unwrap();

        // Kind mismatch.
        assert!(load_discriminator(&path).is_err());

        // Bit flip in the payload.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[30] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_policy(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");

        // Truncation.
        let good = {
            save_policy(&path, &policy).unwrap();
            std::fs::read(&path).unwrap()
        };
        std::fs::write(&path, &good[..good.len() - 7]).unwrap();
        assert!(load_policy(&path).is_err());

        // Foreign file.
        std::fs::write(&path, b"not an artifact at all").unwrap();
        assert!(load_policy(&path).is_err());
    }

    #[test]
    fn expert_sets_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("experts.csv");
        let samples = Gaussian::<f64>::standard(3).sample(&mut RngStream::new(11), 40);
        let set = ExpertSet {
            samples,
            task_id: "random-gaussians/m=3/seed=1".into(),
            sampler_id: "ancestral".into(),
            seed: 11,
        };
        save_expert_set(&path, &set).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = load_expert_set(&path).unwrap();
        assert_eq!(back.task_id, set.task_id);
        assert_eq!(back.sampler_id, set.sampler_id);
        assert_eq!(back.seed, 11);
        for (a, b) in set.samples.iter().zip(back.samples.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn metrics_csv_round_trips_and_checks_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricRow {
                method: "virl".into(),
                task: "random-gaussians".into(),
                size: 10,
                components: 10,
                seed: 0,
                iteration: 3,
                metric: "reverse_kl".into(),
                value: 0.12345678901234567,
                stderr: 0.004,
            },
            MetricRow {
                method: "eim".into(),
                task: "random-gaussians".into(),
                size: 5,
                components: 1,
                seed: 4,
                iteration: 0,
                metric: "neg_elbo".into(),
                value: -3.5,
                stderr: 0.1,
            },
        ];
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(METRICS_HEADER));
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].value, 0.12345678901234567);

        std::fs::write(&path, "wrong,header\n1,2\n").unwrap();
        assert!(read_metrics_csv(&path).is_err());
    }

    #[test]
    fn manifests_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.toml");
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            method: "virl".into(),
            task_id: "grid-walker/d=5".into(),
            seed: 2,
            artifacts: vec!["metrics.csv".into(), "reward.bin".into()],
            wall_clock_seconds: 12.5,
        };
        write_manifest(&path, &manifest).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), manifest);
    }
}
