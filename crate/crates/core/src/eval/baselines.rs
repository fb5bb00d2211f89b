//! Comparison models: unimodal, impute-then-concatenate, and late fusion.

use serde::{Deserialize, Serialize};

use crate::data::impute::{concat_filled, mean_fill, zero_fill};
use crate::data::{DatasetSchema, MaskedSample};
use crate::error::{Error, Result};
use crate::eval::metrics::{compute_metrics, MetricSet};
use crate::ndiff::nn::{absorb_grads, Mlp, Module};
use crate::ndiff::{AdamState, SeededRng, Tape};
use crate::setnet::softmax;
use crate::trainer::{fit, PhaseLog, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Trained and evaluated on modality `k` alone.
    Unimodal(usize),
    /// Concatenation model with zeros in missing slots.
    ZeroFillMultimodal,
    /// Concatenation model with training-set per-modality means in missing slots.
    MeanImputeMultimodal,
    /// One unimodal classifier per modality, probabilities averaged per sample.
    LateFusionAverage,
}

impl BaselineKind {
    pub fn name(self) -> String {
        match self {
            BaselineKind::Unimodal(k) => format!("unimodal:{k}"),
            BaselineKind::ZeroFillMultimodal => "zero_fill".into(),
            BaselineKind::MeanImputeMultimodal => "mean_impute".into(),
            BaselineKind::LateFusionAverage => "late_fusion".into(),
        }
    }
}

/// A dense classifier on fixed-width vectors: `[r, backbone..., d_z, c]`.
#[derive(Debug, Clone)]
pub struct ItemClassifier {
    pub net: Mlp,
}

impl ItemClassifier {
    pub fn new(
        prefix: &str,
        input_width: usize,
        num_classes: usize,
        cfg: &TrainConfig,
        seed_label: &str,
    ) -> Result<Self> {
        let mut widths = vec![input_width];
        widths.extend(&cfg.model.backbone_hidden);
        widths.push(cfg.model.d_z);
        widths.push(num_classes);
        let mut rng = SeededRng::derived(cfg.run.seed, seed_label);
        Ok(ItemClassifier {
            net: Mlp::new(prefix, &widths, false, &mut rng)?,
        })
    }

    pub fn proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.constant_vec(x);
        let logits = self.net.forward(&mut tape, xv)?;
        Ok(softmax(tape.value(logits)))
    }

    fn mean_loss(&self, items: &[(Vec<f64>, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in items {
            let mut tape = Tape::new();
            let xv = tape.constant_vec(x);
            let logits = self.net.forward(&mut tape, xv)?;
            let l = tape.softmax_cross_entropy(logits, *y)?;
            total += tape.value(l)[0];
        }
        Ok(total / items.len() as f64)
    }

    /// Cross-entropy training with the phase-1 optimizer settings and early stopping.
    pub fn train(
        &mut self,
        train: &[(Vec<f64>, usize)],
        val: &[(Vec<f64>, usize)],
        cfg: &TrainConfig,
        phase: &str,
    ) -> Result<PhaseLog> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::arg(format!("{phase}: empty training or validation items")));
        }
        let mut adam = AdamState::new(cfg.adam(cfg.phase1.lr));
        let mut rng = SeededRng::derived(cfg.run.seed, &format!("{phase}/shuffle"));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let batch = cfg.phase1.batch_size;
        fit(
            phase,
            self,
            cfg.phase1.max_epochs,
            cfg.phase1.patience,
            |m, _| {
                rng.shuffle(&mut order);
                let mut total = 0.0;
                for chunk in order.chunks(batch) {
                    let mut tape = Tape::new();
                    let mut losses = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let xv = tape.constant_vec(&train[i].0);
                        let logits = m.net.forward(&mut tape, xv)?;
                        losses.push(tape.softmax_cross_entropy(logits, train[i].1)?);
                    }
                    let loss = if losses.len() == 1 {
                        losses[0]
                    } else {
                        let s = tape.stack(&losses)?;
                        let s = tape.reshape(s, &[losses.len()])?;
                        tape.reduce(s, 0, crate::ndiff::ReduceKind::Mean)?
                    };
                    total += tape.value(loss)[0] * chunk.len() as f64;
                    tape.backward(loss)?;
                    absorb_grads(m.net.params_mut(), &tape.param_grads())?;
                    adam.step(m.net.params_mut())?;
                }
                Ok(total / train.len() as f64)
            },
            |m| m.mean_loss(val),
        )
    }
}

/// Every instance of modality `k` across `samples`, labelled.
fn modality_items(samples: &[MaskedSample], k: usize) -> Vec<(Vec<f64>, usize)> {
    samples
        .iter()
        .filter_map(|s| s.slots[k].as_ref().map(|p| (p, s.label)))
        .flat_map(|(p, y)| p.instances().iter().map(move |x| (x.clone(), y)))
        .collect()
}

fn train_unimodal(
    schema: &DatasetSchema,
    k: usize,
    train: &[MaskedSample],
    val: &[MaskedSample],
    cfg: &TrainConfig,
) -> Result<ItemClassifier> {
    let mut clf = ItemClassifier::new(
        &format!("unimodal{k}"),
        schema.input_width,
        schema.num_classes,
        cfg,
        &format!("unimodal/{k}"),
    )?;
    clf.train(
        &modality_items(train, k),
        &modality_items(val, k),
        cfg,
        &format!("unimodal{k}"),
    )?;
    Ok(clf)
}

/// Positive-class probabilities of every instance in `s`'s observed slots
/// that `models` covers.
fn item_probs(models: &[(usize, &ItemClassifier)], s: &MaskedSample, pos: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &(k, clf) in models {
        if let Some(p) = &s.slots[k] {
            for x in p.instances() {
                out.push(clf.proba(x)?[pos]);
            }
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample-level positive-class scores of a fitted baseline.
pub enum FittedBaseline {
    Unimodal(usize, ItemClassifier),
    Concat { fill: Vec<Vec<f64>>, clf: ItemClassifier },
    LateFusion(Vec<ItemClassifier>),
}

impl FittedBaseline {
    pub fn score(&self, s: &MaskedSample, pos: usize) -> Result<f64> {
        match self {
            FittedBaseline::Unimodal(k, clf) => {
                let probs = item_probs(&[(*k, clf)], s, pos)?;
                if probs.is_empty() {
                    return Err(Error::arg(format!(
                        "unimodal:{k} baseline cannot score `{}`: modality {k} is missing",
                        s.sample_id
                    )));
                }
                Ok(mean(&probs))
            }
            FittedBaseline::Concat { fill, clf } => Ok(clf.proba(&concat_filled(s, fill))?[pos]),
            FittedBaseline::LateFusion(models) => {
                let refs: Vec<(usize, &ItemClassifier)> = models.iter().enumerate().collect();
                Ok(mean(&item_probs(&refs, s, pos)?))
            }
        }
    }

    pub fn evaluate(&self, test: &[MaskedSample], pos: usize) -> Result<MetricSet> {
        let scores = test
            .iter()
            .map(|s| Ok((self.score(s, pos)?, s.label)))
            .collect::<Result<Vec<_>>>()?;
        compute_metrics(&scores, pos)
    }
}

pub fn fit_baseline(
    kind: BaselineKind,
    schema: &DatasetSchema,
    train: &[MaskedSample],
    val: &[MaskedSample],
    cfg: &TrainConfig,
) -> Result<FittedBaseline> {
    let d = schema.num_modalities();
    let r = schema.input_width;
    match kind {
        BaselineKind::Unimodal(k) => {
            if k >= d {
                return Err(Error::arg(format!("unimodal:{k} on a {d}-modality schema")));
            }
            Ok(FittedBaseline::Unimodal(k, train_unimodal(schema, k, train, val, cfg)?))
        }
        BaselineKind::ZeroFillMultimodal | BaselineKind::MeanImputeMultimodal => {
            let fill = if kind == BaselineKind::ZeroFillMultimodal {
                zero_fill(d, r)
            } else {
                mean_fill(train, d, r)
            };
            let items = |ss: &[MaskedSample]| -> Vec<(Vec<f64>, usize)> {
                ss.iter().map(|s| (concat_filled(s, &fill), s.label)).collect()
            };
            let mut clf = ItemClassifier::new("concat", d * r, schema.num_classes, cfg, "concat")?;
            clf.train(&items(train), &items(val), cfg, "concat")?;
            Ok(FittedBaseline::Concat { fill, clf })
        }
        BaselineKind::LateFusionAverage => {
            let models = (0..d)
                .map(|k| train_unimodal(schema, k, train, val, cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(FittedBaseline::LateFusion(models))
        }
    }
}

/// Fits `kind` on train/val and scores it on test.
pub fn run_baseline(
    kind: BaselineKind,
    schema: &DatasetSchema,
    [train, val, test]: [&[MaskedSample]; 3],
    cfg: &TrainConfig,
) -> Result<MetricSet> {
    if let BaselineKind::Unimodal(k) = kind {
        if let Some(s) = test.iter().find(|s| k < s.slots.len() && s.slots[k].is_none()) {
            return Err(Error::arg(format!(
                "unimodal:{k} needs modality {k} in every test sample; `{}` lacks it",
                s.sample_id
            )));
        }
    }
    fit_baseline(kind, schema, train, val, cfg)?.evaluate(test, cfg.run.positive_class)
}
