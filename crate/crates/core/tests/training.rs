mod common;

use std::path::Path;

use hypermm::data::impute::{fill_count, reset_fill_count};
use hypermm::data::{
    apply_missingness, generate, to_set, Dataset, DatasetSchema, GeneratorConfig, MaskedSample, Mechanism,
};
use hypermm::encoder::{Encoder, EncoderConfig};
use hypermm::eval::{fit_baseline, BaselineKind, FittedBaseline};
use hypermm::hyperlayer::ModalityId;
use hypermm::ndiff::nn::{absorb_grads, Module};
use hypermm::ndiff::{AdamConfig, AdamState, Checkpoint, SeededRng, Tape};
use hypermm::setnet::{SetClassifier, SetObservation};
use hypermm::trainer::{
    freeze, phase1_eval_loss, phase1_items, run_full, split_dataset, train_phase1, train_phase2, HyperMM, TrainConfig,
};
use hypermm::Error;

fn schema(d: usize) -> DatasetSchema {
    let names: Vec<String> = (0..d).map(|i| format!("m{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    DatasetSchema::new(&refs, 32, 2)
}

fn dataset(d: usize, n: usize, seed: u64, p: f64) -> Dataset {
    let s = schema(d);
    let samples = generate(&s, n, seed, &GeneratorConfig::default()).unwrap();
    Dataset::new(s, apply_missingness(&samples, p, Mechanism::Mcar, seed + 100).unwrap()).unwrap()
}

fn quick_config(seed: u64, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.run.seed = seed;
    cfg.phase1.max_epochs = epochs;
    cfg.phase2.max_epochs = epochs;
    cfg
}

#[test]
fn phase1_loss_drops_on_separable_unimodal_task() {
    let s = schema(1);
    for seed in 0..3 {
        let samples = generate(&s, 64, seed, &GeneratorConfig::default()).unwrap();
        let mut enc = Encoder::new(EncoderConfig::new(32, 2, 1), &mut SeededRng::new(seed)).unwrap();
        let mut adam = AdamState::new(AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        });
        let loss_at = |enc: &Encoder| -> f64 {
            samples
                .iter()
                .map(|x| {
                    let mut t = Tape::new();
                    let xv = t.constant_vec(&x.payloads[0].instances()[0]);
                    let out = enc.phase1_forward(&mut t, xv, ModalityId(0)).unwrap();
                    let l = enc.phase1_loss(&mut t, &out, x.label, Default::default()).unwrap();
                    t.value(l)[0]
                })
                .sum::<f64>()
        };
        let initial = loss_at(&enc);
        for step in 0..200 {
            let x = &samples[step % samples.len()];
            let mut t = Tape::new();
            let xv = t.constant_vec(&x.payloads[0].instances()[0]);
            let out = enc.phase1_forward(&mut t, xv, ModalityId(0)).unwrap();
            let l = enc.phase1_loss(&mut t, &out, x.label, Default::default()).unwrap();
            t.backward(l).unwrap();
            absorb_grads(enc.params_mut(), &t.param_grads()).unwrap();
            adam.step(enc.params_mut()).unwrap();
        }
        let last = loss_at(&enc);
        assert!(last < 0.3 * initial, "seed {seed}: {initial} -> {last}");
    }
}

#[test]
fn phase1_unimodal_head_is_accurate_and_restores_best() {
    for seed in 0..3 {
        let ds = dataset(2, 200, seed, 0.0);
        let cfg = quick_config(seed, 30);
        let [train, val, _] = split_dataset(&ds, &cfg).unwrap();
        let (tr, va) = (phase1_items(&train), phase1_items(&val));
        let mut enc = Encoder::new(cfg.encoder_config(32, 2, 2), &mut SeededRng::new(seed)).unwrap();
        let log = train_phase1(&mut enc, &tr, &va, &cfg).unwrap();
        assert!(log.stopped_epoch() <= log.best_epoch + cfg.phase1.patience);
        assert_eq!(phase1_eval_loss(&enc, &va, &cfg).unwrap(), log.best_val_loss);
        let min = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(min, log.best_val_loss);

        let correct = va
            .iter()
            .filter(|it| {
                let mut t = Tape::new();
                let x = t.constant_vec(&it.payload);
                let out = enc.phase1_forward(&mut t, x, it.modality).unwrap();
                let p = t.value(out.y_pred);
                (p[1] > p[0]) as usize == it.label
            })
            .count();
        let acc = correct as f64 / va.len() as f64;
        assert!(acc >= 0.9, "seed {seed}: {acc}");
    }
}

#[test]
fn empty_phase1_stream_is_rejected() {
    let cfg = TrainConfig::default();
    let mut enc = Encoder::new(cfg.encoder_config(32, 2, 2), &mut SeededRng::new(0)).unwrap();
    assert!(matches!(
        train_phase1(&mut enc, &[], &[], &cfg),
        Err(Error::Argument(_))
    ));
}

#[test]
fn phase2_needs_frozen_encoder_and_touches_only_rho() {
    let ds = dataset(2, 60, 3, 0.0);
    let cfg = quick_config(3, 2);
    let [train, val, _] = split_dataset(&ds, &cfg).unwrap();
    let sets = |v: &[MaskedSample]| -> Vec<SetObservation> { v.iter().map(to_set).collect() };
    let mut rng = SeededRng::new(0);
    let mut enc = Encoder::new(cfg.encoder_config(32, 2, 2), &mut rng).unwrap();
    let mut clf = SetClassifier::new(&cfg.rho_widths(2), cfg.model.aggregator, &mut rng).unwrap();
    let err = train_phase2(&mut clf, &enc, &sets(&train), &sets(&val), &cfg).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");

    let before = freeze(&mut enc);
    assert!(enc.params().iter().all(|(_, t)| !t.requires_grad()));
    // a hand-rolled step: the optimizer only ever sees rho
    let mut adam = AdamState::new(cfg.adam(1e-3));
    let mut t = Tape::new();
    let l = clf.phase2_loss(&mut t, &enc, &sets(&train)[..4]).unwrap();
    t.backward(l).unwrap();
    let grads = t.param_grads();
    assert!(grads.keys().all(|k| k.starts_with("rho/")), "{:?}", grads.keys());
    absorb_grads(clf.params_mut(), &grads).unwrap();
    adam.step(clf.params_mut()).unwrap();
    assert!(adam.tracked().all(|n| n.starts_with("rho/")));
    let err = adam.step(enc.params_mut()).unwrap_err();
    assert!(err.to_string().contains("encoder/"), "{err}");

    train_phase2(&mut clf, &enc, &sets(&train), &sets(&val), &cfg).unwrap();
    assert_eq!(enc.checksum(), before);
}

#[test]
fn complete_data_pipeline_reaches_high_accuracy() {
    for seed in 0..3 {
        let ds = dataset(2, 200, seed, 0.0);
        let (_, report) = run_full(&quick_config(seed, 30), &ds).unwrap();
        assert!(
            report.test_metrics.accuracy >= 0.95,
            "seed {seed}: {:?}",
            report.test_metrics
        );
        assert!(report.checksums_match());
        assert!(report.encoder_checksum_before_phase2.is_some());
    }
}

#[test]
fn missing_modalities_never_trigger_filling() {
    let ds = dataset(3, 150, 7, 0.5);
    assert!(ds.samples.iter().any(|s| s.mask.observed() < 3));
    reset_fill_count();
    let (model, _) = run_full(&quick_config(7, 3), &ds).unwrap();
    for s in &ds.samples {
        model.predict_proba(&to_set(s)).unwrap();
    }
    assert_eq!(fill_count(), 0);
}

#[test]
fn runs_are_reproducible_and_checkpoints_round_trip() {
    let ds = dataset(2, 80, 1, 0.3);
    let cfg = quick_config(1, 4);
    let (m1, r1) = run_full(&cfg, &ds).unwrap();
    let (m2, r2) = run_full(&cfg, &ds).unwrap();
    assert_eq!(r1.to_json(), r2.to_json());
    assert_eq!(r1.loss_table(), r2.loss_table());
    let (b1, b2) = (m1.to_checkpoint().to_bytes(), m2.to_checkpoint().to_bytes());
    assert_eq!(b1, b2);

    let restored = HyperMM::from_checkpoint(&Checkpoint::from_bytes(&b1, Path::new("mem")).unwrap()).unwrap();
    assert!(restored.encoder.is_frozen());
    assert_eq!(restored.encoder.checksum(), m1.encoder.checksum());
    for s in &ds.samples {
        let set = to_set(s);
        assert_eq!(restored.predict_proba(&set).unwrap(), m1.predict_proba(&set).unwrap());
    }
}

#[test]
fn joint_variant_trains_in_one_phase() {
    let ds = dataset(2, 80, 2, 0.0);
    let mut cfg = quick_config(2, 3);
    cfg.run.two_steps = false;
    let (_, report) = run_full(&cfg, &ds).unwrap();
    assert!(report.phase1.is_none());
    assert_eq!(report.phase2.phase, "joint");
    assert!(report.encoder_checksum_before_phase2.is_none());
}

#[test]
fn overflowing_inputs_are_a_numeric_failure() {
    let mut ds = dataset(2, 40, 0, 0.0);
    for s in &mut ds.samples {
        for slot in s.slots.iter_mut().flatten() {
            if let hypermm::data::Payload::Single(x) = slot {
                x.iter_mut().for_each(|v| *v *= 1e300);
            }
        }
    }
    match run_full(&quick_config(0, 2), &ds) {
        Err(e @ Error::Numeric { .. }) => {
            assert_eq!(e.exit_code(), 3);
            assert!(e.to_string().contains("epoch 1"), "{e}");
        }
        other => panic!("{other:?}"),
    }
}

fn scores(b: &FittedBaseline, samples: &[MaskedSample]) -> Vec<f64> {
    samples.iter().map(|s| b.score(s, 1).unwrap()).collect()
}

#[test]
fn baseline_reductions_hold_exactly() {
    let cfg = quick_config(4, 3);
    let complete = dataset(2, 80, 4, 0.0);
    let [train, val, test] = split_dataset(&complete, &cfg).unwrap();
    let s = &complete.schema;

    reset_fill_count();
    let zero = fit_baseline(BaselineKind::ZeroFillMultimodal, s, &train, &val, &cfg).unwrap();
    let mean = fit_baseline(BaselineKind::MeanImputeMultimodal, s, &train, &val, &cfg).unwrap();
    assert_eq!(scores(&zero, &test), scores(&mean, &test));
    assert_eq!(fill_count(), 0, "no slot is filled on complete data");

    let masked = dataset(2, 80, 4, 0.5);
    let [train, val, test] = split_dataset(&masked, &cfg).unwrap();
    let fusion = fit_baseline(BaselineKind::LateFusionAverage, s, &train, &val, &cfg).unwrap();
    let singles: Vec<MaskedSample> = test.iter().filter(|x| x.mask.observed() == 1).cloned().collect();
    assert!(!singles.is_empty());
    for k in 0..2 {
        let uni = fit_baseline(BaselineKind::Unimodal(k), s, &train, &val, &cfg).unwrap();
        for x in singles.iter().filter(|x| !x.mask.is_missing(k)) {
            assert_eq!(fusion.score(x, 1).unwrap(), uni.score(x, 1).unwrap());
        }
    }
    let zero = fit_baseline(BaselineKind::ZeroFillMultimodal, s, &train, &val, &cfg).unwrap();
    reset_fill_count();
    scores(&zero, &test);
    assert_eq!(
        fill_count() as usize,
        test.iter().map(|x| 2 - x.mask.observed()).sum::<usize>()
    );
}
