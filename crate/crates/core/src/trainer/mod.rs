//! Two-phase training: universal encoder first, then the frozen-encoder set
//! classifier. Both phases early-stop on validation loss and restore the
//! best-scoring parameters.

pub mod config;
pub mod early_stop;
pub mod report;

use std::collections::BTreeMap;
use std::time::Instant;

use crate::data::{split, to_set, Dataset, DatasetSchema, MaskedSample, Payload};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::metrics::{compute_metrics, MetricSet};
use crate::hyperlayer::ModalityId;
use crate::ndiff::nn::{absorb_grads, Module};
use crate::ndiff::{AdamState, Checkpoint, ReduceKind, SeededRng, Tape, Var};
use crate::setnet::{SetClassifier, SetObservation};

pub use config::TrainConfig;
pub use early_stop::{EarlyStopping, StopDecision};
pub use report::{EpochRecord, PhaseLog, TrainReport};

fn numeric(phase: &str, epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(detail) => Error::Numeric {
            phase: phase.to_string(),
            epoch,
            detail,
        },
        other => other,
    }
}

/// Epoch loop with early stopping and best-state restoration.
///
/// `train_epoch` runs one pass and returns the mean training loss;
/// `val_loss` scores the current state.
pub fn fit<M: Clone>(
    phase: &str,
    model: &mut M,
    max_epochs: usize,
    patience: usize,
    mut train_epoch: impl FnMut(&mut M, usize) -> Result<f64>,
    mut val_loss: impl FnMut(&M) -> Result<f64>,
) -> Result<PhaseLog> {
    let mut stopper = EarlyStopping::new(patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut early_stopped = false;
    for epoch in 1..=max_epochs {
        let train_loss = train_epoch(model, epoch).map_err(|e| numeric(phase, epoch, e))?;
        let val = val_loss(model).map_err(|e| numeric(phase, epoch, e))?;
        for (what, v) in [("training", train_loss), ("validation", val)] {
            if !v.is_finite() {
                return Err(Error::Numeric {
                    phase: phase.to_string(),
                    epoch,
                    detail: format!("{what} loss is {v}"),
                });
            }
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val,
        });
        match stopper.observe(epoch, val) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                early_stopped = true;
                break;
            }
        }
    }
    *model = best;
    Ok(PhaseLog {
        phase: phase.to_string(),
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
        early_stopped,
    })
}

fn mean_loss(tape: &mut Tape, losses: &[Var]) -> Result<Var> {
    if losses.len() == 1 {
        return Ok(losses[0]);
    }
    let stacked = tape.stack(losses)?;
    let flat = tape.reshape(stacked, &[losses.len()])?;
    tape.reduce(flat, 0, ReduceKind::Mean)
}

/// A single observed image-like payload with its modality and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Item {
    pub payload: Vec<f64>,
    pub modality: ModalityId,
    pub label: usize,
}

/// Every observed slot of every sample, with bag instances listed individually.
pub fn phase1_items(samples: &[MaskedSample]) -> Vec<Phase1Item> {
    samples
        .iter()
        .flat_map(|s| {
            s.observed().flat_map(move |(m, p)| {
                p.instances().iter().map(move |x| Phase1Item {
                    payload: x.clone(),
                    modality: m,
                    label: s.label,
                })
            })
        })
        .collect()
}

fn phase1_item_loss(enc: &Encoder, tape: &mut Tape, item: &Phase1Item, cfg: &TrainConfig) -> Result<Var> {
    let x = tape.constant_vec(&item.payload);
    let out = enc.phase1_forward(tape, x, item.modality)?;
    enc.phase1_loss(tape, &out, item.label, cfg.phase1_loss())
}

/// Mean phase-1 loss over `items` without recording gradients.
pub fn phase1_eval_loss(enc: &Encoder, items: &[Phase1Item], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let mut tape = Tape::new();
        let l = phase1_item_loss(enc, &mut tape, item, cfg)?;
        total += tape.value(l)[0];
    }
    Ok(total / items.len() as f64)
}

/// Trains the encoder on unpaired single-modality items with
/// `mse(z, z_rec) + ce(y_pred, y)`.
pub fn train_phase1(
    enc: &mut Encoder,
    train: &[Phase1Item],
    val: &[Phase1Item],
    cfg: &TrainConfig,
) -> Result<PhaseLog> {
    if train.is_empty() {
        return Err(Error::arg("phase 1 needs at least one training item"));
    }
    if val.is_empty() {
        return Err(Error::arg("phase 1 needs at least one validation item"));
    }
    if enc.is_frozen() {
        return Err(Error::contract("cannot run phase 1 on a frozen encoder"));
    }
    let mut adam = AdamState::new(cfg.adam(cfg.phase1.lr));
    let mut rng = SeededRng::derived(cfg.run.seed, "phase1/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.phase1.batch_size;

    fit(
        "phase1",
        enc,
        cfg.phase1.max_epochs,
        cfg.phase1.patience,
        |enc, _epoch| {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let mut tape = Tape::new();
                let losses = chunk
                    .iter()
                    .map(|&i| phase1_item_loss(enc, &mut tape, &train[i], cfg))
                    .collect::<Result<Vec<_>>>()?;
                let loss = mean_loss(&mut tape, &losses)?;
                total += tape.value(loss)[0] * chunk.len() as f64;
                tape.backward(loss)?;
                absorb_grads(enc.params_mut(), &tape.param_grads())?;
                adam.step(enc.params_mut())?;
            }
            Ok(total / train.len() as f64)
        },
        |enc| phase1_eval_loss(enc, val, cfg),
    )
}

/// Freezes the encoder and returns its parameter checksum.
pub fn freeze(enc: &mut Encoder) -> String {
    enc.freeze();
    enc.checksum()
}

/// Per-element latents of every set under a frozen encoder.
pub fn encode_sets(enc: &Encoder, sets: &[SetObservation]) -> Result<Vec<Vec<Vec<f64>>>> {
    sets.iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::arg(format!("set `{}` has no elements", s.sample_id)));
            }
            s.elements
                .iter()
                .map(|el| match &el.payload {
                    Payload::Single(x) => enc.embed(x, el.modality),
                    Payload::Bag(xs) => enc.embed_bag(xs, el.modality),
                })
                .collect()
        })
        .collect()
}

fn label_of(s: &SetObservation) -> Result<usize> {
    s.label
        .ok_or_else(|| Error::contract(format!("set `{}` has no label", s.sample_id)))
}

fn cached_set_loss(clf: &SetClassifier, tape: &mut Tape, feats: &[Vec<f64>], y: usize) -> Result<Var> {
    let vars: Vec<Var> = feats.iter().map(|f| tape.constant_vec(f)).collect();
    let logits = clf.logits_from_features(tape, &vars)?;
    tape.softmax_cross_entropy(logits, y)
}

fn cached_eval_loss(clf: &SetClassifier, feats: &[Vec<Vec<f64>>], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (f, &y) in feats.iter().zip(labels) {
        let mut tape = Tape::new();
        let l = cached_set_loss(clf, &mut tape, f, y)?;
        total += tape.value(l)[0];
    }
    Ok(total / feats.len() as f64)
}

/// Trains the set classifier's parameters only, against a frozen encoder.
/// Element latents are computed once since the encoder cannot change.
pub fn train_phase2(
    clf: &mut SetClassifier,
    enc: &Encoder,
    train: &[SetObservation],
    val: &[SetObservation],
    cfg: &TrainConfig,
) -> Result<PhaseLog> {
    if !enc.is_frozen() {
        return Err(Error::contract("phase 2 requires a frozen encoder"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::arg("phase 2 needs non-empty training and validation sets"));
    }
    let train_labels = train.iter().map(label_of).collect::<Result<Vec<_>>>()?;
    let val_labels = val.iter().map(label_of).collect::<Result<Vec<_>>>()?;
    let train_feats = encode_sets(enc, train)?;
    let val_feats = encode_sets(enc, val)?;

    let mut adam = AdamState::new(cfg.adam(cfg.phase2.lr));
    let mut rng = SeededRng::derived(cfg.run.seed, "phase2/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.phase2.batch_size;

    fit(
        "phase2",
        clf,
        cfg.phase2.max_epochs,
        cfg.phase2.patience,
        |clf, _epoch| {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let mut tape = Tape::new();
                let losses = chunk
                    .iter()
                    .map(|&i| cached_set_loss(clf, &mut tape, &train_feats[i], train_labels[i]))
                    .collect::<Result<Vec<_>>>()?;
                let loss = mean_loss(&mut tape, &losses)?;
                total += tape.value(loss)[0] * chunk.len() as f64;
                tape.backward(loss)?;
                absorb_grads(clf.params_mut(), &tape.param_grads())?;
                adam.step(clf.params_mut())?;
            }
            Ok(total / train.len() as f64)
        },
        |clf| cached_eval_loss(clf, &val_feats, &val_labels),
    )
}

fn joint_eval_loss(enc: &Encoder, clf: &SetClassifier, sets: &[SetObservation]) -> Result<f64> {
    let mut total = 0.0;
    for s in sets {
        let mut tape = Tape::new();
        let logits = clf.forward_unchecked(&mut tape, enc, s)?;
        let l = tape.softmax_cross_entropy(logits, label_of(s)?)?;
        total += tape.value(l)[0];
    }
    Ok(total / sets.len() as f64)
}

/// Single-phase variant: backbone, hypernetwork and set classifier are
/// optimized together on the set objective alone.
pub fn train_joint(
    enc: &mut Encoder,
    clf: &mut SetClassifier,
    train: &[SetObservation],
    val: &[SetObservation],
    cfg: &TrainConfig,
) -> Result<PhaseLog> {
    if enc.is_frozen() {
        return Err(Error::contract("joint training needs a trainable encoder"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::arg(
            "joint training needs non-empty training and validation sets",
        ));
    }
    let mut adam = AdamState::new(cfg.adam(cfg.phase2.lr));
    let mut rng = SeededRng::derived(cfg.run.seed, "joint/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.phase2.batch_size;
    let mut pair = (enc.clone(), clf.clone());

    let log = fit(
        "joint",
        &mut pair,
        cfg.phase2.max_epochs,
        cfg.phase2.patience,
        |(enc, clf), _epoch| {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let mut tape = Tape::new();
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let logits = clf.forward_unchecked(&mut tape, enc, &train[i])?;
                    losses.push(tape.softmax_cross_entropy(logits, label_of(&train[i])?)?);
                }
                let loss = mean_loss(&mut tape, &losses)?;
                total += tape.value(loss)[0] * chunk.len() as f64;
                tape.backward(loss)?;
                let grads = tape.param_grads();
                absorb_grads(enc.phi_params_mut(), &grads)?;
                absorb_grads(clf.params_mut(), &grads)?;
                let mut params = enc.phi_params_mut();
                params.extend(clf.params_mut());
                adam.step(params)?;
            }
            Ok(total / train.len() as f64)
        },
        |(enc, clf)| joint_eval_loss(enc, clf, val),
    )?;
    *enc = pair.0;
    *clf = pair.1;
    Ok(log)
}

/// A trained encoder + set classifier pair with the schema it was built for.
#[derive(Debug, Clone)]
pub struct HyperMM {
    pub schema: DatasetSchema,
    pub config: TrainConfig,
    pub encoder: Encoder,
    pub classifier: SetClassifier,
}

impl HyperMM {
    pub fn new(schema: DatasetSchema, config: TrainConfig) -> Result<Self> {
        schema.validate()?;
        config.validate()?;
        if config.run.positive_class >= schema.num_classes {
            return Err(Error::Config(format!(
                "positive_class {} out of range for {} classes",
                config.run.positive_class, schema.num_classes
            )));
        }
        let mut rng = SeededRng::derived(config.run.seed, "init");
        let enc_cfg = config.encoder_config(schema.input_width, schema.num_classes, schema.num_modalities());
        let encoder = Encoder::new(enc_cfg, &mut rng)?;
        let classifier = SetClassifier::new(
            &config.rho_widths(schema.num_classes),
            config.model.aggregator,
            &mut rng,
        )?;
        Ok(HyperMM {
            schema,
            config,
            encoder,
            classifier,
        })
    }

    pub fn predict_proba(&self, s: &SetObservation) -> Result<Vec<f64>> {
        self.classifier.predict_proba(&self.encoder, s)
    }

    pub fn evaluate(&self, sets: &[SetObservation]) -> Result<MetricSet> {
        let pos = self.config.run.positive_class;
        let scores = sets
            .iter()
            .map(|s| Ok((self.predict_proba(s)?[pos], label_of(s)?)))
            .collect::<Result<Vec<_>>>()?;
        compute_metrics(&scores, pos)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.header.insert("kind".into(), "hypermm".into());
        ck.header
            .insert("encoder_frozen".into(), self.encoder.is_frozen().to_string());
        ck.header
            .insert("aggregator".into(), self.classifier.aggregator.name().into());
        ck.header.insert("config".into(), self.config.to_toml());
        ck.header.insert(
            "schema".into(),
            serde_json::to_string(&self.schema).expect("schema serializes"),
        );
        for (name, t) in self.encoder.params().into_iter().chain(self.classifier.params()) {
            ck.insert(name, t);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header_value("kind")? != "hypermm" {
            return Err(Error::arg("checkpoint does not hold a HyperMM model"));
        }
        let config = TrainConfig::from_toml(ck.header_value("config")?)?;
        let schema: DatasetSchema = serde_json::from_str(ck.header_value("schema")?)
            .map_err(|e| Error::arg(format!("checkpoint schema: {e}")))?;
        let mut model = HyperMM::new(schema, config)?;
        model.classifier.aggregator = ck.header_value("aggregator")?.parse()?;
        ck.restore_into(model.encoder.params_mut())?;
        ck.restore_into(model.classifier.params_mut())?;
        if ck.header_value("encoder_frozen")? == "true" {
            model.encoder.freeze();
        }
        Ok(model)
    }
}

/// Phase 1 → freeze → phase 2 (or the joint variant) on pre-split data,
/// then test-set evaluation.
pub fn train_hypermm(
    schema: &DatasetSchema,
    cfg: &TrainConfig,
    train: &[MaskedSample],
    val: &[MaskedSample],
    test: &[MaskedSample],
) -> Result<(HyperMM, TrainReport)> {
    let start = Instant::now();
    let mut model = HyperMM::new(schema.clone(), cfg.clone())?;
    let train_sets: Vec<SetObservation> = train.iter().map(to_set).collect();
    let val_sets: Vec<SetObservation> = val.iter().map(to_set).collect();
    let test_sets: Vec<SetObservation> = test.iter().map(to_set).collect();
    if test_sets.is_empty() {
        return Err(Error::arg("empty test split"));
    }

    let (phase1, phase2, before, after) = if cfg.run.two_steps {
        let p1 = train_phase1(&mut model.encoder, &phase1_items(train), &phase1_items(val), cfg)?;
        let before = freeze(&mut model.encoder);
        let p2 = train_phase2(&mut model.classifier, &model.encoder, &train_sets, &val_sets, cfg)?;
        let after = model.encoder.checksum();
        (Some(p1), p2, Some(before), Some(after))
    } else {
        let log = train_joint(&mut model.encoder, &mut model.classifier, &train_sets, &val_sets, cfg)?;
        model.encoder.freeze();
        (None, log, None, None)
    };

    let test_metrics = model.evaluate(&test_sets)?;
    let report = TrainReport {
        seed: cfg.run.seed,
        two_steps: cfg.run.two_steps,
        split_sizes: [train.len(), val.len(), test.len()],
        phase1,
        phase2,
        encoder_checksum_before_phase2: before,
        encoder_checksum_after_phase2: after,
        test_metrics,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Splits with the config's ratios and seed.
pub fn split_dataset(ds: &Dataset, cfg: &TrainConfig) -> Result<[Vec<MaskedSample>; 3]> {
    let seed = crate::ndiff::rng::mix_seed(cfg.run.seed, "split");
    let (a, b, c) = split(&ds.samples, cfg.data.split, seed)?;
    Ok([a, b, c])
}

/// Full pipeline on one dataset.
pub fn run_full(cfg: &TrainConfig, ds: &Dataset) -> Result<(HyperMM, TrainReport)> {
    ds.validate()?;
    let [train, val, test] = split_dataset(ds, cfg)?;
    train_hypermm(&ds.schema, cfg, &train, &val, &test)
}

/// Number of observed elements per modality across `sets`.
pub fn modality_counts(sets: &[SetObservation]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for s in sets {
        for el in &s.elements {
            *out.entry(el.modality.0).or_insert(0) += 1;
        }
    }
    out
}
