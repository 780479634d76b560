//! Experiment configuration: TOML files with strict keys, dotted `--set`
//! overrides, full default expansion, and a content hash over the resolved
//! form that gates reruns and resume.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lightcl_core::arch::Arch;
use lightcl_core::baselines::{BaselineConfig, ErConfig, EwcConfig};
use lightcl_core::lightcl::{LightClConfig, SelectionBatch, TrainMode};
use lightcl_core::outcome::MethodTag;
use lightcl_core::stream::{DatasetName, EvalMode, StreamConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: MethodTag,
    pub arch: Arch,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data_root: PathBuf,
    pub stream: StreamSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub lightcl: LightClSection,
    #[serde(default)]
    pub ewc: EwcSection,
    #[serde(default)]
    pub er: ErSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
}

/// Stream settings; the run seed comes from the top level so one key drives
/// every random choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub dataset: DatasetName,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub eval_mode: EvalMode,
    #[serde(default = "default_subsample")]
    pub subsample_fraction: f64,
}

fn default_subsample() -> f64 {
    1.0
}

/// Per-field defaults (not just whole-section ones) let `--set` inject a
/// single key into a section the file never declared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightClSection {
    pub mode: TrainMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fz_layer: Option<String>,
    pub freeze_norm_stats: bool,
    pub ratio: f64,
    pub beta: f64,
    pub mem_size: usize,
    pub selection_batch: SelectionBatch,
    pub regulation: bool,
}

impl Default for LightClSection {
    fn default() -> Self {
        let d = LightClConfig::default();
        LightClSection {
            mode: d.mode,
            fz_layer: d.fz_layer,
            freeze_norm_stats: d.freeze_norm_stats,
            ratio: d.ratio,
            beta: d.beta,
            mem_size: d.mem_size,
            selection_batch: d.selection_batch,
            regulation: d.regulation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EwcSection {
    pub lambda: f64,
    pub fisher_samples: usize,
}

impl Default for EwcSection {
    fn default() -> Self {
        EwcSection {
            lambda: 100.0,
            fisher_samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErSection {
    pub capacity: usize,
}

impl Default for ErSection {
    fn default() -> Self {
        ErSection { capacity: 200 }
    }
}

/// Settings for the profiling command: train the two consecutive tasks of
/// `task_pair` under each seed, or load a fixed checkpoint pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub seeds: Vec<u64>,
    #[serde(default = "default_task_pair")]
    pub task_pair: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_prev: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_curr: Option<PathBuf>,
}

fn default_task_pair() -> [usize; 2] {
    [1, 2]
}

impl ExperimentConfig {
    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            dataset: self.stream.dataset,
            num_tasks: self.stream.num_tasks,
            classes_per_task: self.stream.classes_per_task,
            eval_mode: self.stream.eval_mode,
            seed: self.seed,
            subsample_fraction: self.stream.subsample_fraction,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.seed,
        }
    }

    pub fn lightcl_config(&self) -> LightClConfig {
        LightClConfig {
            mode: self.lightcl.mode,
            fz_layer: self.lightcl.fz_layer.clone(),
            freeze_norm_stats: self.lightcl.freeze_norm_stats,
            ratio: self.lightcl.ratio,
            beta: self.lightcl.beta,
            mem_size: self.lightcl.mem_size,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            selection_batch: self.lightcl.selection_batch,
            regulation: self.lightcl.regulation,
            seed: self.seed,
        }
    }

    pub fn ewc_config(&self) -> EwcConfig {
        EwcConfig {
            base: self.baseline_config(),
            lambda: self.ewc.lambda,
            fisher_samples: self.ewc.fisher_samples,
        }
    }

    pub fn er_config(&self) -> ErConfig {
        ErConfig {
            base: self.baseline_config(),
            capacity: self.er.capacity,
        }
    }

    /// Canonical serialized form; hashing and persistence both use it so a
    /// byte-equal resolved config implies an equal hash.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("cannot serialize resolved config: {e}")))
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.resolved_toml()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Read a config file, apply dotted `--set key=value` overrides, then the
/// `--seed` and `--out` flags, and expand all defaults.
pub fn load_config(
    path: &Path,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for set in sets {
        apply_set(&mut value, set)?;
    }
    let mut config: ExperimentConfig = value
        .try_into()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        config.seed = seed;
        if let Some(profile) = &mut config.profile {
            profile.seeds = vec![seed];
        }
    }
    if let Some(out) = out {
        config.output_dir = out.to_path_buf();
    }
    validate(&config)?;
    Ok(config)
}

fn validate(config: &ExperimentConfig) -> Result<()> {
    if config.stream.num_tasks == 0 || config.stream.classes_per_task == 0 {
        return Err(CliError::Config(
            "stream.num_tasks and stream.classes_per_task must be positive".into(),
        ));
    }
    if config.train.batch_size == 0 {
        return Err(CliError::Config("train.batch_size must be positive".into()));
    }
    if let Some(profile) = &config.profile {
        if profile.seeds.is_empty() {
            return Err(CliError::Config("profile.seeds must not be empty".into()));
        }
        let [a, b] = profile.task_pair;
        if b != a + 1 || a == 0 || b > config.stream.num_tasks {
            return Err(CliError::Config(format!(
                "profile.task_pair [{a}, {b}] must name consecutive tasks within the stream"
            )));
        }
        if profile.checkpoint_prev.is_some() != profile.checkpoint_curr.is_some() {
            return Err(CliError::Config(
                "checkpoint_prev and checkpoint_curr must be given together".into(),
            ));
        }
    }
    Ok(())
}

/// Apply one `key.path=value` override onto the raw TOML tree. Values parse
/// as TOML (so numbers, booleans, arrays, and quoted strings work); bare
/// words fall back to strings.
pub(crate) fn apply_set(root: &mut toml::Value, set: &str) -> Result<()> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set '{set}' is not key=value")))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set '{key}': '{part}' is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split('.') yields at least one part");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    const MINIMAL: &str = r#"
method = "lightcl"
arch = "small_cnn"
seed = 1
output_dir = "out"
data_root = "data"

[stream]
dataset = "split_mnist"
num_tasks = 5
classes_per_task = 2
eval_mode = "til"
"#;

    #[test]
    fn defaults_expand_and_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), MINIMAL);
        let a = load_config(&path, &[], None, None).unwrap();
        let b = load_config(&path, &[], None, None).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.train.epochs, 5);
        assert_eq!(a.lightcl.ratio, 0.15);
        assert_eq!(a.lightcl.beta, 2e-4);
        assert_eq!(a.lightcl.mem_size, 15);
        assert_eq!(a.stream.subsample_fraction, 1.0);
        // The resolved form re-parses to the same config.
        let resolved: ExperimentConfig = toml::from_str(&a.resolved_toml().unwrap()).unwrap();
        assert_eq!(resolved, a);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &format!("{MINIMAL}\nnot_a_key = 3\n"));
        let err = load_config(&path, &[], None, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn set_overrides_reach_nested_keys_and_change_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), MINIMAL);
        let base = load_config(&path, &[], None, None).unwrap();
        let over = load_config(
            &path,
            &[
                "train.learning_rate=0.2".into(),
                "lightcl.beta=0".into(),
                "lightcl.fz_layer=conv1".into(),
                "seed=9".into(),
            ],
            None,
            None,
        )
        .unwrap();
        assert_eq!(over.train.learning_rate, 0.2);
        assert_eq!(over.lightcl.beta, 0.0);
        assert_eq!(over.lightcl.fz_layer.as_deref(), Some("conv1"));
        assert_eq!(over.seed, 9);
        assert_ne!(base.hash().unwrap(), over.hash().unwrap());
        // Typos inside --set hit the same unknown-key guard.
        let err = load_config(&path, &["train.lr=0.2".into()], None, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn flags_override_seed_and_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), MINIMAL);
        let cfg = load_config(&path, &[], Some(42), Some(Path::new("elsewhere"))).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn profile_pair_must_be_consecutive_and_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{MINIMAL}\n[profile]\nseeds = [1, 2]\ntask_pair = [2, 4]\n");
        let path = write_config(dir.path(), &body);
        let err = load_config(&path, &[], None, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
