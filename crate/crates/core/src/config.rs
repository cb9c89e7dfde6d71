//! Declarative experiment configuration (TOML) and the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Corner;
use crate::error::{FlipError, Result};
use crate::federation::FederationConfig;
use crate::inversion::InversionConfig;
use crate::theory::TheoryConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A directory holding `train-*` and `t10k-*` IDX files (optionally gzipped).
    Idx { dir: PathBuf },
    /// Gaussian blobs, for quick runs without a dataset on disk.
    Synthetic {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Idx {
            dir: PathBuf::from("data/mnist"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Keep only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    /// Side of the square patch in pixels.
    pub size: usize,
    pub corner: Corner,
    pub margin: usize,
    pub target_label: usize,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            size: 4,
            corner: Corner::TopLeft,
            margin: 1,
            target_label: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub roc: bool,
    pub triggers: bool,
    /// Also run the bound-check harness and write `theory.json`.
    pub theory: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            roc: true,
            triggers: true,
            theory: false,
        }
    }
}

/// Values swept by the `sweep` subcommand. Empty lists are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub tau: Vec<f64>,
    pub trigger_size: Vec<usize>,
    pub dirichlet_alpha: Vec<f64>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.tau.is_empty() && self.trigger_size.is_empty() && self.dirichlet_alpha.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub trigger: TriggerConfig,
    pub federation: FederationConfig,
    pub inversion: InversionConfig,
    pub theory: TheoryConfig,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
}

fn config_err(key: impl Into<String>, message: impl Into<String>) -> FlipError {
    FlipError::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn toml_err(e: toml::de::Error) -> FlipError {
    let message = e.message().to_string();
    let key = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
        .map_or_else(|| "<document>".to_string(), str::to_string);
    config_err(key, message)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(toml_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.federation.validate()?;
        self.inversion.validate()?;
        self.theory.validate()?;
        if self.trigger.size == 0 {
            return Err(config_err("trigger.size", "must be at least 1"));
        }
        if let DataSource::Synthetic {
            num_classes,
            dim,
            train_per_class,
            test_per_class,
        } = &self.data.source
        {
            if *num_classes < 2 {
                return Err(config_err("data.source.num_classes", "must be at least 2"));
            }
            if *dim < 4 {
                return Err(config_err("data.source.dim", "must be at least 4"));
            }
            if *train_per_class == 0 || *test_per_class == 0 {
                return Err(config_err("data.source", "per-class sample counts must be positive"));
            }
            if self.trigger.target_label >= *num_classes {
                return Err(config_err("trigger.target_label", "must be a valid class"));
            }
        }
        if let Some(t) = self.sweep.tau.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(config_err("sweep.tau", format!("{t} is outside [0, 1]")));
        }
        if self.sweep.trigger_size.contains(&0) {
            return Err(config_err("sweep.trigger_size", "sizes must be at least 1"));
        }
        if let Some(a) = self.sweep.dirichlet_alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(config_err("sweep.dirichlet_alpha", format!("{a} is not positive")));
        }
        Ok(())
    }
}

pub const PRESET_NAMES: [&str; 6] = [
    "theory-harness",
    "continuous-mnist",
    "single-shot-mnist",
    "adaptive",
    "trigger-size-sweep",
    "alpha-sweep",
];

fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "theory-harness" => include_str!("../presets/theory-harness.toml"),
        "continuous-mnist" => include_str!("../presets/continuous-mnist.toml"),
        "single-shot-mnist" => include_str!("../presets/single-shot-mnist.toml"),
        "adaptive" => include_str!("../presets/adaptive.toml"),
        "trigger-size-sweep" => include_str!("../presets/trigger-size-sweep.toml"),
        "alpha-sweep" => include_str!("../presets/alpha-sweep.toml"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| {
        config_err(
            "preset",
            format!("unknown preset `{name}`; expected one of {}", PRESET_NAMES.join(", ")),
        )
    })?;
    ExperimentConfig::from_toml_str(text)
}

/// Resolve a relative dataset directory against the working directory first
/// and the repository root second.
pub fn resolve_data_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() || dir.exists() {
        return dir.to_path_buf();
    }
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(dir);
    if repo.exists() {
        repo
    } else {
        dir.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::{AggregatorKind, AttackMode, DefenseKind};

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let f = &cfg.federation;
        assert_eq!(f.tau, 0.3);
        assert_eq!((f.benign_lr, f.poison_lr), (0.1, 0.05));
        assert_eq!((f.batch_size, f.poison_count), (64, 20));
        assert_eq!(f.dirichlet_alpha, Some(0.5));
        assert_eq!((f.num_clients, f.clients_per_round, f.num_adversaries), (100, 10, 4));
        assert_eq!((f.epochs_continuous, f.epochs_single_shot), (5, 10));
        assert_eq!(cfg.trigger.target_label, 2);
        assert_eq!(cfg.inversion.augmented_per_batch, 64);
    }

    #[test]
    fn too_many_clients_per_round_is_named() {
        let err = ExperimentConfig::from_toml_str("[federation]\nnum_clients = 10\nclients_per_round = 11\n").unwrap_err();
        match err {
            FlipError::Config { key, .. } => assert_eq!(key, "federation.clients_per_round"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in ["foo = 1", "[federation]\nfoo = 1", "[inversion]\nbogus = true"] {
            match ExperimentConfig::from_toml_str(doc).unwrap_err() {
                FlipError::Config { key, message } => {
                    assert!(key == "foo" || key == "bogus", "{key}: {message}");
                }
                e => panic!("unexpected {e}"),
            }
        }
    }

    #[test]
    fn nested_values_parse() {
        let doc = r#"
seed = 9
[data.source]
kind = "synthetic"
num_classes = 4
dim = 16
train_per_class = 30
test_per_class = 10
[trigger]
size = 2
corner = "bottom-right"
target_label = 1
[federation]
attack_mode = "single_shot"
defense = "none"
dirichlet_alpha = 0.9
[federation.aggregator]
rule = "krum"
f = 1
[sweep]
tau = [0.0, 0.3, 0.7]
"#;
        let cfg = ExperimentConfig::from_toml_str(doc).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.trigger.corner, Corner::BottomRight);
        assert_eq!(cfg.federation.attack_mode, AttackMode::SingleShot);
        assert_eq!(cfg.federation.defense, DefenseKind::None);
        assert_eq!(cfg.federation.aggregator, AggregatorKind::Krum { f: 1 });
        assert_eq!(cfg.sweep.tau, vec![0.0, 0.3, 0.7]);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_sweep_values_are_named() {
        let err = ExperimentConfig::from_toml_str("[sweep]\ntau = [1.5]").unwrap_err();
        assert!(matches!(err, FlipError::Config { ref key, .. } if key == "sweep.tau"));
    }

    #[test]
    fn presets_parse() {
        for name in PRESET_NAMES {
            preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn iid_split_round_trips() {
        let cfg = preset("theory-harness").unwrap();
        assert_eq!(cfg.federation.dirichlet_alpha, None);
        assert!(cfg.to_toml_string().contains("dirichlet_alpha = \"iid\""));
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let err = ExperimentConfig::from_toml_str("[federation]\ndirichlet_alpha = \"skewed\"").unwrap_err();
        assert!(err.to_string().contains("iid"), "{err}");
    }
}
