//! Model, training and run configuration.
//!
//! A run config file is TOML with optional `[model]`, `[train]`, `[data]`
//! and `[synthetic]` tables; missing fields fall back to the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::synthetic::SyntheticConfig;
use crate::error::{Error, Result};

/// Activation used inside the long-term pair scorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Time-variant features per visit.
    pub n_features: usize,
    /// Longest supported journey. Time-indexed weights are sized by it.
    pub t_max: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    /// Number of stacked attention blocks.
    pub stacked_depth: usize,
    pub d_h: usize,
    pub d_u: usize,
    /// Diagnosis code vocabulary size.
    pub g_c: usize,
    /// Procedure code vocabulary size.
    pub g_d: usize,
    pub long_activation: Activation,
    pub disable_stacked: bool,
    pub disable_short: bool,
    pub disable_long: bool,
    pub disable_coupled: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_features: 16,
            t_max: 48,
            heads: 2,
            d_k: 16,
            d_ff: 64,
            stacked_depth: 1,
            d_h: 32,
            d_u: 64,
            g_c: 32,
            g_d: 32,
            long_activation: Activation::Tanh,
            disable_stacked: false,
            disable_short: false,
            disable_long: false,
            disable_coupled: false,
            seed: 0,
        }
    }
}

/// The ablation variants, named after the module they remove.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    /// Without stacked attention.
    NoStacked,
    /// Without short-term temporal attention.
    NoShort,
    /// Without long-term temporal attention.
    NoLong,
    /// Without coupled attention pooling.
    NoCoupled,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoStacked,
        Variant::NoShort,
        Variant::NoLong,
        Variant::NoCoupled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "tattnet",
            Variant::NoStacked => "tattnet_alpha",
            Variant::NoShort => "tattnet_beta",
            Variant::NoLong => "tattnet_gamma",
            Variant::NoCoupled => "tattnet_delta",
        }
    }

    /// Returns `cfg` with exactly this variant's flag set.
    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        ModelConfig {
            disable_stacked: self == Variant::NoStacked,
            disable_short: self == Variant::NoShort,
            disable_long: self == Variant::NoLong,
            disable_coupled: self == Variant::NoCoupled,
            ..cfg.clone()
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_features", self.n_features),
            ("t_max", self.t_max),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_ff", self.d_ff),
            ("stacked_depth", self.stacked_depth),
            ("d_h", self.d_h),
            ("d_u", self.d_u),
            ("g_c", self.g_c),
            ("g_d", self.g_d),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.disable_short && self.disable_long {
            return Err(Error::Config(
                "at least one of the short-term and long-term modules must be enabled".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation AUPRC improvement before stopping.
    pub patience: usize,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 300,
            batch_size: 32,
            patience: 20,
            repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and nonnegative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.repeats == 0 {
            return Err(Error::Config(
                "epochs, batch_size, patience and repeats must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
}

/// Ingestion options.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Per-feature value used for a missing cell with no earlier
    /// observation; features past the end of the list use 0.
    pub fallback: Vec<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.synthetic.validate()?;
        if cfg.data.fallback.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("data.fallback values must be finite".into()));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("[model]\nheads = 4\n[train]\nepochs = 7\n").unwrap();
        assert_eq!(cfg.model.heads, 4);
        assert_eq!(cfg.model.d_k, 16);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nheadz = 4\n").is_err());
    }

    #[test]
    fn short_and_long_cannot_both_be_disabled() {
        let cfg = ModelConfig {
            disable_short: true,
            disable_long: true,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variants_set_single_flag() {
        let base = ModelConfig::default();
        let flags = |c: &ModelConfig| {
            [c.disable_stacked, c.disable_short, c.disable_long, c.disable_coupled]
                .iter()
                .filter(|f| **f)
                .count()
        };
        assert_eq!(flags(&Variant::Full.apply(&base)), 0);
        for v in &Variant::ALL[1..] {
            assert_eq!(flags(&v.apply(&base)), 1);
        }
    }
}
