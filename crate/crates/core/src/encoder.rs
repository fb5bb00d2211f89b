//! Universal feature extractor.
//!
//! A shared dense backbone maps a payload to features `z`; the
//! hypernetwork-generated layer for the payload's modality maps `z` to the
//! latent `e`. Two auxiliary heads hang off `e` during phase 1: a decoder
//! reconstructing `z` and a unimodal classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperlayer::{HyperConfig, HyperNetwork, ModalityId};
use crate::ndiff::nn::{checksum, set_trainable, Linear, Mlp, Module};
use crate::ndiff::{ReduceKind, SeededRng, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Common payload width `r`.
    pub input_width: usize,
    /// Hidden widths between `r` and `d_z`.
    pub backbone_hidden: Vec<usize>,
    pub d_z: usize,
    pub d_l: usize,
    pub num_classes: usize,
    pub num_modalities: usize,
    pub embed_dim: usize,
    pub hyper_hidden: usize,
}

impl EncoderConfig {
    pub fn new(input_width: usize, num_classes: usize, num_modalities: usize) -> Self {
        EncoderConfig {
            input_width,
            backbone_hidden: vec![64],
            d_z: 32,
            d_l: 16,
            num_classes,
            num_modalities,
            embed_dim: 8,
            hyper_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.input_width, self.d_z, self.d_l, self.embed_dim, self.hyper_hidden];
        if widths.contains(&0) || self.backbone_hidden.contains(&0) {
            return Err(Error::arg(format!("encoder widths must be >= 1: {self:?}")));
        }
        if self.num_classes < 2 {
            return Err(Error::arg("need at least two classes"));
        }
        if self.num_modalities < 1 {
            return Err(Error::arg("need at least one modality"));
        }
        Ok(())
    }
}

/// How the two phase-1 objectives are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Loss {
    pub mse_weight: f64,
    /// Treat `z` as a constant reconstruction target.
    pub detach_target: bool,
}

impl Default for Phase1Loss {
    fn default() -> Self {
        Phase1Loss {
            mse_weight: 1.0,
            detach_target: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Phase1Output {
    pub z: Var,
    pub e: Var,
    pub z_rec: Var,
    pub y_pred: Var,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    pub backbone: Mlp,
    pub hypernet: HyperNetwork,
    pub decoder: Linear,
    pub uniclassifier: Linear,
    frozen: bool,
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_width];
        widths.extend(&config.backbone_hidden);
        widths.push(config.d_z);
        let backbone = Mlp::new("encoder/backbone", &widths, true, rng)?;
        let hypernet = HyperNetwork::new(
            HyperConfig {
                num_modalities: config.num_modalities,
                embed_dim: config.embed_dim,
                hidden: config.hyper_hidden,
                d_z: config.d_z,
                d_l: config.d_l,
            },
            rng,
        )?;
        let decoder = Linear::new("encoder/decoder", config.d_l, config.d_z, rng)?;
        let uniclassifier = Linear::new("encoder/uniclassifier", config.d_l, config.num_classes, rng)?;
        Ok(Encoder {
            config,
            backbone,
            hypernet,
            decoder,
            uniclassifier,
            frozen: false,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Excludes every encoder and hypernetwork tensor from optimization.
    pub fn freeze(&mut self) {
        set_trainable(self.params_mut(), false);
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        set_trainable(self.params_mut(), true);
        self.frozen = false;
    }

    /// Parameters of the mapping `x ↦ e` (backbone and hypernetwork).
    pub fn phi_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.params();
        out.extend(self.hypernet.params());
        out
    }

    pub fn phi_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.params_mut();
        out.extend(self.hypernet.params_mut());
        out
    }

    pub fn checksum(&self) -> String {
        checksum(self.params())
    }

    fn features(&self, tape: &mut Tape, x: Var, m: ModalityId) -> Result<Var> {
        self.hypernet.check_modality(m)?;
        if tape.shape(x) != [self.config.input_width] {
            return Err(Error::dim(format!(
                "payload of shape {:?}, encoder expects width {}",
                tape.shape(x),
                self.config.input_width
            )));
        }
        self.backbone.forward(tape, x)
    }

    /// `e = φ(x | m)`.
    pub fn phi_forward(&self, tape: &mut Tape, x: Var, m: ModalityId) -> Result<Var> {
        let z = self.features(tape, x, m)?;
        self.hypernet.conditional_linear(tape, z, m)
    }

    pub fn phase1_forward(&self, tape: &mut Tape, x: Var, m: ModalityId) -> Result<Phase1Output> {
        let z = self.features(tape, x, m)?;
        let e = self.hypernet.conditional_linear(tape, z, m)?;
        let z_rec = self.decoder.forward(tape, e)?;
        let y_pred = self.uniclassifier.forward(tape, e)?;
        Ok(Phase1Output { z, e, z_rec, y_pred })
    }

    /// `w·mse(z, z_rec) + ce(y_pred, y)`.
    pub fn phase1_loss(&self, tape: &mut Tape, out: &Phase1Output, y: usize, loss: Phase1Loss) -> Result<Var> {
        let ce = tape.softmax_cross_entropy(out.y_pred, y)?;
        let target = if loss.detach_target { tape.detach(out.z) } else { out.z };
        let mse = tape.mse(out.z_rec, target)?;
        let mse = if loss.mse_weight == 1.0 {
            mse
        } else {
            tape.scale(mse, loss.mse_weight)?
        };
        tape.add(mse, ce)
    }

    /// Elementwise max of `φ(x_j | m)` over a bag of same-modality payloads.
    pub fn pool_instances(&self, tape: &mut Tape, xs: &[Var], m: ModalityId) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::arg("cannot pool an empty bag"));
        }
        let feats = xs
            .iter()
            .map(|&x| self.phi_forward(tape, x, m))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.stack(&feats)?;
        tape.reduce(stacked, 0, ReduceKind::Max)
    }

    /// Gradient-free `φ(x | m)` for a raw payload.
    pub fn embed(&self, x: &[f64], m: ModalityId) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.constant_vec(x);
        let e = self.phi_forward(&mut tape, xv, m)?;
        Ok(tape.value(e).to_vec())
    }

    /// Gradient-free instance pooling for a raw bag.
    pub fn embed_bag(&self, xs: &[Vec<f64>], m: ModalityId) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant_vec(x)).collect();
        let e = self.pool_instances(&mut tape, &vars, m)?;
        Ok(tape.value(e).to_vec())
    }
}

impl Module for Encoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.phi_params();
        out.extend(self.decoder.params());
        out.extend(self.uniclassifier.params());
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.params_mut();
        out.extend(self.hypernet.params_mut());
        out.extend(self.decoder.params_mut());
        out.extend(self.uniclassifier.params_mut());
        out
    }
}
