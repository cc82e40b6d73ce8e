//! Declarative experiment configuration (TOML) and the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vcbench_core::jointtrain::TrainConfig;
use vcbench_core::nets::{Family, OptimizerKind, OutputMode};
use vcbench_core::objectives::TradeoffWeights;
use vcbench_core::outputguard::DefenseScheme;
use vcbench_core::sentinel::FinetuneConfig;

use crate::error::{BenchError, BenchResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Where runs go unless `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub classifier: ModelSection,
    /// Defaults to the classifier's family, width and depth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<ModelSection>,
    pub train: TrainSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default)]
    pub defense: DefenseSection,
    #[serde(default)]
    pub detector: DetectorSection,
    /// Run seeds on separate threads.
    #[serde(default)]
    pub parallel_seeds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    /// `[height, width]` after resizing.
    pub size: [usize; 2],
    /// Dataset root; `$VCBENCH_DATA` or `./data` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Binary label spaces only: keep the `k` most balanced attributes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k_balanced: Option<usize>,
    /// Binary label spaces only: keep these attribute indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<usize>>,
    /// Binary label spaces only: logit threshold for accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_depth() -> usize {
    vcbench_core::nets::DEFAULT_WRN_DEPTH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Channel `G` is trained and evaluated on: `logits`, `softmax` or
    /// `sigmoid`.
    #[serde(default = "default_mode", with = "as_string")]
    pub output_mode: OutputMode,
    pub beta_c: f64,
    pub beta_r: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub delta: f64,
}

fn default_mode() -> OutputMode {
    OutputMode::Logits
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    /// Covariance ridge; the library default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    /// Scheme names such as `identity`, `round(2)`, `gaussian(0.5)`.
    #[serde(default)]
    pub schemes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_probe")]
    pub probe_size: usize,
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_mode", with = "as_string")]
    pub channel: OutputMode,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_bins")]
    pub entropy_bins: usize,
}

fn d_steps() -> usize {
    20
}
fn d_probe() -> usize {
    256
}
fn d_lr() -> f64 {
    1e-3
}
fn d_threshold() -> f64 {
    vcbench_core::sentinel::DEFAULT_THRESHOLD
}
fn d_bins() -> usize {
    16
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            enabled: false,
            steps: d_steps(),
            probe_size: d_probe(),
            batch_size: 0,
            learning_rate: d_lr(),
            optimizer: OptimizerKind::Adam,
            channel: OutputMode::Logits,
            threshold: d_threshold(),
            entropy_bins: d_bins(),
        }
    }
}

mod as_string {
    use serde::{Deserialize, Deserializer, Serializer};
    use vcbench_core::nets::OutputMode;

    pub fn serialize<S: Serializer>(m: &OutputMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<OutputMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl TrainSection {
    pub fn weights(&self) -> TradeoffWeights {
        TradeoffWeights {
            beta_c: self.beta_c,
            beta_r: self.beta_r,
            alpha: self.alpha,
            gamma: self.gamma,
            delta: self.delta,
        }
    }

    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            weights: self.weights(),
            output_mode: self.output_mode,
            seed,
        }
    }

    /// Sets `(beta_c, beta_r)` from a reconstruction/classification ratio.
    pub fn set_ratio(&mut self, ratio: f64) -> BenchResult<()> {
        let w = TradeoffWeights::from_ratio(ratio)?;
        self.beta_c = w.beta_c;
        self.beta_r = w.beta_r;
        Ok(())
    }
}

impl DetectorSection {
    pub fn to_finetune(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            steps: self.steps,
            probe_size: self.probe_size,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            channel: self.channel,
            threshold: self.threshold,
            seed,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> BenchResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> BenchResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Named preset, or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> BenchResult<Self> {
        match preset(name_or_path) {
            Some(cfg) => Ok(cfg),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn defense_schemes(&self) -> BenchResult<Vec<DefenseScheme>> {
        self.defense.schemes.iter().map(|s| s.parse().map_err(BenchError::from)).collect()
    }

    pub fn validate(&self) -> BenchResult<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.dataset.size[0] == 0 || self.dataset.size[1] == 0 {
            return bad("dataset size must be positive".into());
        }
        if self.dataset.top_k_balanced.is_some() && self.dataset.attributes.is_some() {
            return bad("choose either top_k_balanced or attributes, not both".into());
        }
        for m in std::iter::once(&self.classifier).chain(self.decoder.as_ref()) {
            if m.width == 0 {
                return bad("model width must be positive".into());
            }
        }
        self.train.to_train_config(0).validate()?;
        if let Some(r) = self.risk.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("ridge {r} must be finite and non-negative"));
            }
        }
        self.defense_schemes()?;
        if self.detector.enabled {
            self.detector.to_finetune(0).validate()?;
            if self.detector.entropy_bins < 2 {
                return bad("entropy_bins must be at least 2".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory
    /// and dataset root (they do not change results).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.dataset.root = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub const PRESETS: &[&str] = &["paper-mnist-logits", "desk-mnist", "desk-synthetic", "desk-synthetic-binary"];

/// Shipped configurations.
///
/// `paper-mnist-logits` is the paper's setup (width-5 wide residual networks,
/// 32x32 inputs, 50 epochs, batch 250, five seeds). The `desk-*` presets
/// are small enough for a laptop.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let train = |epochs, batch_size, beta_r| TrainSection {
        epochs,
        batch_size,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::Adam,
        output_mode: OutputMode::Logits,
        beta_c: 1.0,
        beta_r,
        alpha: 1.0,
        gamma: 1.0,
        delta: 1.0,
    };
    let dataset = |name: &str, size| DatasetSection {
        name: name.into(),
        size,
        root: None,
        top_k_balanced: None,
        attributes: None,
        threshold: None,
    };
    let all_defenses = ["identity", "softmax", "round(1)", "round(2)", "round(3)", "round(4)", "argmax", "gaussian(1)", "laplace(1)"];
    let cfg = match name {
        "paper-mnist-logits" => ExperimentConfig {
            name: name.into(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: None,
            dataset: dataset("mnist", [32, 32]),
            classifier: ModelSection { family: Family::Wideresnet, width: 5, depth: default_depth() },
            decoder: None,
            train: train(50, 250, 1.0),
            risk: RiskSection::default(),
            defense: DefenseSection::default(),
            detector: DetectorSection::default(),
            parallel_seeds: false,
        },
        "desk-mnist" => ExperimentConfig {
            name: name.into(),
            seeds: vec![0, 1],
            out_dir: None,
            dataset: dataset("mnist", [28, 28]),
            classifier: ModelSection { family: Family::Smallcnn, width: 2, depth: default_depth() },
            decoder: None,
            train: train(6, 128, 1.0),
            risk: RiskSection::default(),
            defense: DefenseSection::default(),
            detector: DetectorSection::default(),
            parallel_seeds: false,
        },
        "desk-synthetic" => ExperimentConfig {
            name: name.into(),
            seeds: vec![0, 1],
            out_dir: None,
            dataset: dataset("synthetic-categorical", [16, 16]),
            classifier: ModelSection { family: Family::Mlp, width: 1, depth: default_depth() },
            decoder: None,
            train: train(20, 128, 3.0),
            risk: RiskSection::default(),
            defense: DefenseSection { schemes: all_defenses.iter().map(|s| s.to_string()).collect() },
            detector: DetectorSection { enabled: true, ..DetectorSection::default() },
            parallel_seeds: false,
        },
        "desk-synthetic-binary" => ExperimentConfig {
            name: name.into(),
            seeds: vec![0, 1],
            out_dir: None,
            dataset: dataset("synthetic-binary:4", [16, 16]),
            classifier: ModelSection { family: Family::Mlp, width: 1, depth: default_depth() },
            decoder: None,
            train: train(20, 128, 3.0),
            risk: RiskSection::default(),
            defense: DefenseSection { schemes: vec!["identity".into(), "gaussian(1)".into(), "laplace(1)".into()] },
            detector: DetectorSection::default(),
            parallel_seeds: false,
        },
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = preset("desk-synthetic").unwrap();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![9];
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = preset("desk-synthetic").unwrap();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = preset("desk-synthetic").unwrap();
        c.defense.schemes.push("blur(3)".into());
        assert!(c.validate().is_err());
        let mut c = preset("desk-synthetic").unwrap();
        c.train.output_mode = OutputMode::Argmax;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("name = 3").is_err());
    }
}
