//! Run configuration: sectioned key = value text with named presets.

use crate::objectives::{EntropyMethod, LossWeights};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    FourSpins,
    TwoCircles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    Learned,
    OracleComplement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub n_labeled_per_class: usize,
    pub test_fraction: f64,
    pub circle_radii: [f64; 2],
    pub pad_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature dimension d_f; set to 2 for feature-space visualization runs.
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub variance_cap: f64,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub generator_mode: GeneratorMode,
    /// Removal radius for the oracle sampler; 0 means twice the median
    /// nearest-neighbor distance of the unlabeled set.
    pub oracle_radius: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub steps: usize,
    pub batch_unlabeled: usize,
    pub batch_generated: usize,
    pub eval_interval: usize,
    pub seed: u64,
    /// Density threshold centile for the low-density term.
    pub q_centile: f64,
    /// KDE bandwidth override; 0 means Scott's rule.
    pub kde_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainParams,
}

impl TrainConfig {
    /// Four spins with a learned feature-matching generator.
    pub fn four_spins_fm() -> Self {
        Self {
            dataset: DatasetConfig {
                kind: DatasetKind::FourSpins,
                n_per_class: 500,
                noise_sigma: 0.01,
                n_labeled_per_class: 5,
                test_fraction: 0.25,
                circle_radii: [0.5, 1.0],
                pad_fraction: 0.1,
            },
            model: ModelConfig {
                feature_dim: 16,
                latent_dim: 10,
                variance_cap: 1.0,
                hidden: vec![64, 64],
            },
            loss: LossWeights::fm_only(),
            train: TrainParams {
                generator_mode: GeneratorMode::Learned,
                oracle_radius: 0.0,
                lr: 1e-3,
                beta1: 0.5,
                beta2: 0.999,
                steps: 4000,
                batch_unlabeled: 64,
                batch_generated: 64,
                eval_interval: 100,
                seed: 1,
                q_centile: 10.0,
                kde_bandwidth: 0.0,
            },
        }
    }

    /// Four spins against the ideal complement sampler (no generator updates).
    pub fn four_spins_oracle() -> Self {
        let mut cfg = Self::four_spins_fm();
        cfg.train.generator_mode = GeneratorMode::OracleComplement;
        cfg
    }

    /// Two circles with feature dimension 2 for feature-space plots.
    pub fn two_circles_fm() -> Self {
        let mut cfg = Self::four_spins_fm();
        cfg.dataset.kind = DatasetKind::TwoCircles;
        cfg.dataset.noise_sigma = 0.025;
        cfg.model.feature_dim = 2;
        cfg
    }

    pub fn two_circles_oracle() -> Self {
        let mut cfg = Self::two_circles_fm();
        cfg.train.generator_mode = GeneratorMode::OracleComplement;
        cfg
    }

    /// Preset lookup used by the CLI's `--dataset` shorthand.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "spins" | "four-spins" => Some(Self::four_spins_fm()),
            "spins-oracle" | "four-spins-oracle" => Some(Self::four_spins_oracle()),
            "circles" | "two-circles" => Some(Self::two_circles_fm()),
            "circles-oracle" | "two-circles-oracle" => Some(Self::two_circles_oracle()),
            _ => None,
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Validation(m));
        if self.train.steps == 0 {
            // zero-step runs are allowed programmatically but a config file
            // asking for one is almost certainly a mistake
            return err("train.steps must be > 0".into());
        }
        if self.train.batch_unlabeled == 0 || self.train.batch_generated == 0 {
            return err("batch sizes must be > 0".into());
        }
        if !(self.train.q_centile > 0.0 && self.train.q_centile <= 100.0) {
            return err(format!("q_centile {} outside (0, 100]", self.train.q_centile));
        }
        if self.dataset.n_per_class == 0 || self.dataset.n_labeled_per_class == 0 {
            return err("dataset counts must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.dataset.test_fraction) {
            return err(format!("test_fraction {}", self.dataset.test_fraction));
        }
        if self.model.feature_dim == 0 || self.model.latent_dim == 0 {
            return err("model dims must be > 0".into());
        }
        if self.model.variance_cap <= 0.0 {
            return err(format!("variance_cap {}", self.model.variance_cap));
        }
        self.loss
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        Ok(())
    }

    /// Applies an ablation tag like `fm`, `fm+ld`, `fm+pt+ent`, `fm+vi`.
    pub fn with_ablation(&self, tag: &str) -> Result<Self, ConfigError> {
        let mut cfg = self.clone();
        cfg.loss = LossWeights {
            w_fm: 0.0,
            w_ent_gen: 0.0,
            w_ld: 0.0,
            w_cond_ent: 0.0,
            entropy_method: EntropyMethod::None,
        };
        for part in tag.split('+') {
            match part.trim() {
                "fm" => cfg.loss.w_fm = 1.0,
                "ld" => cfg.loss.w_ld = 1.0,
                "pt" => {
                    cfg.loss.w_ent_gen = 1.0;
                    cfg.loss.entropy_method = EntropyMethod::Pt;
                }
                "vi" => {
                    cfg.loss.w_ent_gen = 1.0;
                    cfg.loss.entropy_method = EntropyMethod::Vi;
                }
                "ent" => cfg.loss.w_cond_ent = 1.0,
                other => {
                    return Err(ConfigError::Parse(format!(
                        "unknown ablation term {other:?} in {tag:?}"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::four_spins_fm()
    }
}
