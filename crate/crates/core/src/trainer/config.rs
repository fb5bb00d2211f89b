//! Run configuration, read from a sectioned `key = value` (TOML) file.
//!
//! Every key is required so a typo or an omission fails loudly with the
//! offending key named.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, Phase1Loss};
use crate::error::{Error, Result};
use crate::ndiff::{AdamConfig, ReduceKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// `false` trains encoder and set classifier jointly in one phase.
    pub two_steps: bool,
    pub positive_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backbone_hidden: Vec<usize>,
    pub d_z: usize,
    pub d_l: usize,
    pub embed_dim: usize,
    pub hyper_hidden: usize,
    /// Hidden widths of the set classifier between `d_l` and the classes.
    pub rho_hidden: Vec<usize>,
    pub aggregator: ReduceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase1Section {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub mse_weight: f64,
    pub detach_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase2Section {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Train / validation / test fractions.
    pub split: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub phase1: Phase1Section,
    pub phase2: Phase2Section,
    pub optim: OptimSection,
    pub data: DataSection,
}

pub const DEFAULT_CONFIG: &str = include_str!("../../configs/default.toml");

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::from_toml(DEFAULT_CONFIG).expect("shipped default config parses")
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, lr, epochs, patience, batch) in [
            (
                "phase1",
                self.phase1.lr,
                self.phase1.max_epochs,
                self.phase1.patience,
                self.phase1.batch_size,
            ),
            (
                "phase2",
                self.phase2.lr,
                self.phase2.max_epochs,
                self.phase2.patience,
                self.phase2.batch_size,
            ),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name}.lr must be > 0"));
            }
            if epochs == 0 {
                return bad(format!("{name}.max_epochs must be >= 1"));
            }
            if patience == 0 {
                return bad(format!("{name}.patience must be >= 1"));
            }
            if batch == 0 {
                return bad(format!("{name}.batch_size must be >= 1"));
            }
        }
        if !(self.phase1.mse_weight >= 0.0 && self.phase1.mse_weight.is_finite()) {
            return bad("phase1.mse_weight must be >= 0".into());
        }
        let m = &self.model;
        if [m.d_z, m.d_l, m.embed_dim, m.hyper_hidden].contains(&0)
            || m.backbone_hidden.contains(&0)
            || m.rho_hidden.contains(&0)
        {
            return bad("model widths must be >= 1".into());
        }
        let s = self.data.split;
        if s.iter().any(|&r| r.is_nan() || r <= 0.0) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("data.split must be positive and sum to 1, got {s:?}"));
        }
        self.adam(1.0).validate()?;
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            eps: self.optim.eps,
        }
    }

    pub fn encoder_config(&self, input_width: usize, num_classes: usize, num_modalities: usize) -> EncoderConfig {
        EncoderConfig {
            input_width,
            backbone_hidden: self.model.backbone_hidden.clone(),
            d_z: self.model.d_z,
            d_l: self.model.d_l,
            num_classes,
            num_modalities,
            embed_dim: self.model.embed_dim,
            hyper_hidden: self.model.hyper_hidden,
        }
    }

    /// `[d_l, rho_hidden..., num_classes]`.
    pub fn rho_widths(&self, num_classes: usize) -> Vec<usize> {
        let mut w = vec![self.model.d_l];
        w.extend(&self.model.rho_hidden);
        w.push(num_classes);
        w
    }

    pub fn phase1_loss(&self) -> Phase1Loss {
        Phase1Loss {
            mse_weight: self.phase1.mse_weight,
            detach_target: self.phase1.detach_target,
        }
    }
}
