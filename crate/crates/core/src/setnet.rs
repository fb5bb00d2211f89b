//! Permutation-invariant set classifier `ρ(agg{φ(x_i | m_i)})`.

use crate::data::Payload;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::hyperlayer::ModalityId;
use crate::ndiff::nn::{Mlp, Module};
use crate::ndiff::{ReduceKind, SeededRng, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SetElement {
    pub payload: Payload,
    pub modality: ModalityId,
}

/// The observed modalities of one sample. Missing modalities are simply
/// absent; the same modality may appear more than once.
#[derive(Debug, Clone, PartialEq)]
pub struct SetObservation {
    pub elements: Vec<SetElement>,
    pub label: Option<usize>,
    pub sample_id: String,
}

impl SetObservation {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn modalities(&self) -> Vec<ModalityId> {
        self.elements.iter().map(|e| e.modality).collect()
    }
}

/// Elementwise reduction of equal-width features into one vector.
pub fn aggregate(tape: &mut Tape, features: &[Var], kind: ReduceKind) -> Result<Var> {
    if features.is_empty() {
        return Err(Error::arg("cannot aggregate an empty set"));
    }
    let stacked = tape.stack(features)?;
    tape.reduce(stacked, 0, kind)
}

/// Gradient-free [`aggregate`].
pub fn aggregate_values(features: &[Vec<f64>], kind: ReduceKind) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = features.iter().map(|f| tape.constant_vec(f)).collect();
    let out = aggregate(&mut tape, &vars, kind)?;
    Ok(tape.value(out).to_vec())
}

/// Probabilities from logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
pub struct SetClassifier {
    pub aggregator: ReduceKind,
    pub rho: Mlp,
}

impl SetClassifier {
    /// `widths = [d_l, hidden..., c]`; three linear layers by default.
    pub fn new(widths: &[usize], aggregator: ReduceKind, rng: &mut SeededRng) -> Result<Self> {
        Ok(SetClassifier {
            aggregator,
            rho: Mlp::new("rho", widths, false, rng)?,
        })
    }

    pub fn latent_width(&self) -> usize {
        self.rho.in_width()
    }

    pub fn num_classes(&self) -> usize {
        self.rho.out_width()
    }

    /// Encodes every element; bags are max-pooled over their instances.
    pub fn element_features(&self, tape: &mut Tape, enc: &Encoder, s: &SetObservation) -> Result<Vec<Var>> {
        if s.is_empty() {
            return Err(Error::arg(format!("set `{}` has no elements", s.sample_id)));
        }
        s.elements
            .iter()
            .map(|el| match &el.payload {
                Payload::Single(x) => {
                    let x = tape.constant_vec(x);
                    enc.phi_forward(tape, x, el.modality)
                }
                Payload::Bag(xs) => {
                    let xs: Vec<Var> = xs.iter().map(|x| tape.constant_vec(x)).collect();
                    enc.pool_instances(tape, &xs, el.modality)
                }
            })
            .collect()
    }

    /// `ρ(agg(features))`.
    pub fn logits_from_features(&self, tape: &mut Tape, features: &[Var]) -> Result<Var> {
        let pooled = aggregate(tape, features, self.aggregator)?;
        if tape.shape(pooled) != [self.latent_width()] {
            return Err(Error::dim(format!(
                "features of width {:?}, classifier expects {}",
                tape.shape(pooled),
                self.latent_width()
            )));
        }
        self.rho.forward(tape, pooled)
    }

    /// Logits for a set under a frozen encoder.
    pub fn f_forward(&self, tape: &mut Tape, enc: &Encoder, s: &SetObservation) -> Result<Var> {
        if !enc.is_frozen() {
            return Err(Error::contract("set classifier needs a frozen encoder"));
        }
        self.forward_unchecked(tape, enc, s)
    }

    /// As [`SetClassifier::f_forward`] without the freeze requirement; used
    /// when encoder and classifier are trained jointly.
    pub fn forward_unchecked(&self, tape: &mut Tape, enc: &Encoder, s: &SetObservation) -> Result<Var> {
        let feats = self.element_features(tape, enc, s)?;
        self.logits_from_features(tape, &feats)
    }

    /// Mean cross-entropy over a labelled batch.
    pub fn phase2_loss(&self, tape: &mut Tape, enc: &Encoder, batch: &[SetObservation]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        let mut losses = Vec::with_capacity(batch.len());
        for s in batch {
            let y = s
                .label
                .ok_or_else(|| Error::contract(format!("set `{}` has no label", s.sample_id)))?;
            let logits = self.f_forward(tape, enc, s)?;
            losses.push(tape.softmax_cross_entropy(logits, y)?);
        }
        let stacked = tape.stack(&losses)?;
        let flat = tape.reshape(stacked, &[losses.len()])?;
        tape.reduce(flat, 0, ReduceKind::Mean)
    }

    /// Class probabilities for a set.
    pub fn predict_proba(&self, enc: &Encoder, s: &SetObservation) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let logits = self.forward_unchecked(&mut tape, enc, s)?;
        Ok(softmax(tape.value(logits)))
    }
}

impl Module for SetClassifier {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.rho.params()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.rho.params_mut()
    }
}
