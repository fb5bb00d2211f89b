//! Modality-conditioned hypernetwork emitting the encoder's final dense layer.
//!
//! A learned embedding row per modality feeds a one-hidden-layer generator
//! whose output is split into a `[d_l, d_z]` weight matrix and a `[d_l]` bias.
//! Emitted weights are intermediate tape values; only the embedding table and
//! the generator are parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndiff::nn::{affine, Mlp, Module};
use crate::ndiff::{SeededRng, Tape, Tensor, Var};

/// Dense index of a modality within a dataset schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModalityId(pub usize);

impl ModalityId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for ModalityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "modality {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperConfig {
    pub num_modalities: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Input width of the conditional layer.
    pub d_z: usize,
    /// Output (latent) width of the conditional layer.
    pub d_l: usize,
}

pub const EMBEDDING: &str = "hypernet/embedding";

#[derive(Debug, Clone)]
pub struct HyperNetwork {
    config: HyperConfig,
    pub embedding: Tensor,
    pub generator: Mlp,
}

impl HyperNetwork {
    pub fn new(config: HyperConfig, rng: &mut SeededRng) -> Result<Self> {
        let HyperConfig {
            num_modalities,
            embed_dim,
            hidden,
            d_z,
            d_l,
        } = config;
        if [num_modalities, embed_dim, hidden, d_z, d_l].contains(&0) {
            return Err(Error::arg(format!("hypernetwork sizes must be >= 1: {config:?}")));
        }
        let embedding = crate::ndiff::nn::glorot(rng, num_modalities, embed_dim)?.with_grad();
        let generator = Mlp::new("hypernet/generator", &[embed_dim, hidden, d_l * d_z + d_l], false, rng)?;
        Ok(HyperNetwork {
            config,
            embedding,
            generator,
        })
    }

    pub fn config(&self) -> &HyperConfig {
        &self.config
    }

    pub fn check_modality(&self, m: ModalityId) -> Result<()> {
        if m.0 >= self.config.num_modalities {
            return Err(Error::arg(format!(
                "modality index {} out of range for {} modalities",
                m.0, self.config.num_modalities
            )));
        }
        Ok(())
    }

    /// Records the generated `(weight [d_l, d_z], bias [d_l])` for `m`.
    pub fn generate_weights(&self, tape: &mut Tape, m: ModalityId) -> Result<(Var, Var)> {
        self.check_modality(m)?;
        let HyperConfig { d_z, d_l, .. } = self.config;
        let table = tape.param(EMBEDDING, &self.embedding);
        let code = tape.select_row(table, m.0)?;
        let flat = self.generator.forward(tape, code)?;
        let w = tape.slice(flat, 0, d_l * d_z)?;
        let w = tape.reshape(w, &[d_l, d_z])?;
        let b = tape.slice(flat, d_l * d_z, d_l)?;
        Ok((w, b))
    }

    /// Detached copy of the generated layer.
    pub fn generated(&self, m: ModalityId) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let (w, b) = self.generate_weights(&mut tape, m)?;
        Ok((tape.tensor(w), tape.tensor(b)))
    }

    /// `weight · z + bias` with the layer generated for `m`.
    pub fn conditional_linear(&self, tape: &mut Tape, z: Var, m: ModalityId) -> Result<Var> {
        if tape.shape(z) != [self.config.d_z] {
            return Err(Error::dim(format!(
                "conditional layer expects width {}, got {:?}",
                self.config.d_z,
                tape.shape(z)
            )));
        }
        let (w, b) = self.generate_weights(tape, m)?;
        affine(tape, w, z, b)
    }
}

impl Module for HyperNetwork {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![(EMBEDDING.to_string(), &self.embedding)];
        out.extend(self.generator.params());
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![(EMBEDDING.to_string(), &mut self.embedding)];
        out.extend(self.generator.params_mut());
        out
    }
}
