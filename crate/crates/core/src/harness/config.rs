//! Strict experiment configuration.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! n_classes = 5
//! input_dim = 16
//! spread = 0.15
//!
//! [dataset]
//! n = 64
//! augment_noise = 0.0
//! min_delta = 0.01
//!
//! [encoder]
//! width = 128
//! depth = 2
//! output_dim = 16
//!
//! [train]
//! learning_rate = 0.002
//! max_steps = 500
//! target_loss = 0.0
//! eta_monitor = 0.05
//! norm_upper_monitor = 100.0
//! eval_every = 25
//!
//! [verify]
//! runs = 5
//! n_mc = 2000
//! n_per_class = 400
//! n_tasks = 20
//! negatives = [15, 25, 35]
//! k = [1, 2, 4]
//! prop33_negatives = [1, 5, 15]
//!
//! [output]
//! dir = "out"
//! svg = true
//! ```
//!
//! Unknown keys are rejected with their full path. Only `model.rho`
//! (uniform when absent), `model.idx`, `encoder.zero_output_init` and the
//! `verify` lists have defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trainer::TrainConfig;
use crate::verifier::VerifyBudgets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Images kept per class (the first ones in file order).
    pub per_class: usize,
    /// Digit labels to use; one latent class each.
    pub classes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n_classes: usize,
    pub input_dim: usize,
    pub spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    /// Replaces the synthetic class conditionals by image pools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub n: usize,
    pub augment_noise: f64,
    pub min_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderBlock {
    pub width: usize,
    pub depth: usize,
    pub output_dim: usize,
    /// Negative control: start with `B = 0`.
    #[serde(default)]
    pub zero_output_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub target_loss: f64,
    pub eta_monitor: f64,
    pub norm_upper_monitor: f64,
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub runs: usize,
    pub n_mc: usize,
    pub n_per_class: usize,
    pub n_tasks: usize,
    #[serde(default)]
    pub negatives: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub prop33_negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelBlock,
    pub dataset: DatasetBlock,
    pub encoder: EncoderBlock,
    pub train: TrainBlock,
    pub verify: VerifyBlock,
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Format(format!("config key `{path}`: {}", e.into_inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.n_classes < 2 {
            return Err(invalid("model.n_classes must be >= 2"));
        }
        if let Some(idx) = &self.model.idx {
            if idx.classes.len() != self.model.n_classes {
                return Err(invalid("model.idx.classes must list n_classes labels"));
            }
            if idx.per_class == 0 {
                return Err(invalid("model.idx.per_class must be >= 1"));
            }
        } else if self.model.input_dim == 0 || !(self.model.spread >= 0.0) {
            return Err(invalid("model.input_dim must be >= 1 and model.spread >= 0"));
        }
        if let Some(rho) = &self.model.rho {
            if rho.len() != self.model.n_classes {
                return Err(invalid("model.rho must have n_classes entries"));
            }
        }
        if self.encoder.width == 0 || self.encoder.output_dim == 0 {
            return Err(invalid("encoder.width and encoder.output_dim must be >= 1"));
        }
        if self.verify.runs == 0 || self.verify.n_mc < 2 || self.verify.n_per_class == 0 || self.verify.n_tasks == 0 {
            return Err(invalid("verify budgets must be positive (n_mc >= 2)"));
        }
        if self.verify.negatives.iter().any(|&n| n < self.model.n_classes) {
            return Err(Error::VacuousBound(format!(
                "verify.negatives must all be >= n_classes = {}",
                self.model.n_classes
            )));
        }
        if self.verify.k.iter().any(|&k| k == 0 || k >= self.model.n_classes) {
            return Err(invalid("verify.k entries must lie in [1, n_classes - 1]"));
        }
        if self.verify.prop33_negatives.contains(&0) {
            return Err(invalid("verify.prop33_negatives entries must be >= 1"));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            max_steps: self.train.max_steps,
            target_loss: self.train.target_loss,
            eta_monitor: self.train.eta_monitor,
            norm_upper_monitor: self.train.norm_upper_monitor,
            eval_every: self.train.eval_every,
            seed: self.seed,
        }
    }

    pub fn budgets(&self) -> VerifyBudgets {
        VerifyBudgets {
            n_mc: self.verify.n_mc,
            n_per_class: self.verify.n_per_class,
            n_tasks: self.verify.n_tasks,
        }
    }
}

#[cfg(test)]
pub(crate) const EXAMPLE: &str = r#"
seed = 7

[model]
n_classes = 3
input_dim = 6
spread = 0.2

[dataset]
n = 8
augment_noise = 0.0
min_delta = 0.001

[encoder]
width = 16
depth = 1
output_dim = 4

[train]
learning_rate = 0.01
max_steps = 10
target_loss = 0.0
eta_monitor = 0.01
norm_upper_monitor = 100.0
eval_every = 5

[verify]
runs = 2
n_mc = 50
n_per_class = 10
n_tasks = 3
negatives = [3, 6]
k = [1, 2]
prop33_negatives = [1, 4]

[output]
dir = "out"
svg = true
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(cfg.model.n_classes, 3);
        assert_eq!(cfg.verify.negatives, vec![3, 6]);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let text = EXAMPLE.replace("depth = 1", "depth = 1\nbias = true");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("encoder.bias"), "{err}");
    }

    #[test]
    fn physical_constants_are_required() {
        let text = EXAMPLE.replace("width = 16\n", "");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
        let text = EXAMPLE.replace("learning_rate = 0.01\n", "");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn vacuous_negative_counts_rejected() {
        let text = EXAMPLE.replace("negatives = [3, 6]", "negatives = [2]");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::VacuousBound(_))));
    }
}
