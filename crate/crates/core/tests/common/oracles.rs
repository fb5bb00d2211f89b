//! Brute-force references for metrics, data learnability and set invariance.

use hypermm::data::{DatasetSchema, MultimodalSample, Payload};
use hypermm::encoder::{Encoder, EncoderConfig};
use hypermm::eval::MetricSet;
use hypermm::hyperlayer::ModalityId;
use hypermm::ndiff::{ReduceKind, SeededRng, Tape};
use hypermm::setnet::{SetClassifier, SetElement, SetObservation};

pub struct BruteMetrics {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Confusion table by direct counting; AUC by comparing every
/// positive/negative pair (ties count one half).
pub fn brute_metrics(scores: &[(f64, usize)], pos: usize) -> BruteMetrics {
    let called = |p: f64| p >= 0.5;
    let tp = scores.iter().filter(|&&(p, y)| called(p) && y == pos).count();
    let fp = scores.iter().filter(|&&(p, y)| called(p) && y != pos).count();
    let tn = scores.iter().filter(|&&(p, y)| !called(p) && y != pos).count();
    let fn_ = scores.iter().filter(|&&(p, y)| !called(p) && y == pos).count();
    let positives: Vec<f64> = scores.iter().filter(|s| s.1 == pos).map(|s| s.0).collect();
    let negatives: Vec<f64> = scores.iter().filter(|s| s.1 != pos).map(|s| s.0).collect();
    let auc = (!positives.is_empty() && !negatives.is_empty()).then(|| {
        let mut wins = 0.0;
        for &a in &positives {
            for &b in &negatives {
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / (positives.len() * negatives.len()) as f64
    });
    BruteMetrics {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        auc,
        precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
        recall: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
    }
}

/// Checks a computed metric set against the oracle; returns a description of
/// the first disagreement.
pub fn metrics_disagreement(scores: &[(f64, usize)], pos: usize, m: &MetricSet) -> Option<String> {
    let b = brute_metrics(scores, pos);
    if m.accuracy != b.accuracy {
        return Some(format!("accuracy {} vs {}", m.accuracy, b.accuracy));
    }
    match b.auc {
        Some(a) if (m.auc - a).abs() > 1e-12 || m.undefined.auc => return Some(format!("auc {} vs {a}", m.auc)),
        None if !m.undefined.auc || m.auc != 0.0 => return Some("auc should be undefined".into()),
        _ => {}
    }
    for (name, got, want, flag) in [
        ("precision", m.precision, b.precision, m.undefined.precision),
        ("recall", m.recall, b.recall, m.undefined.recall),
    ] {
        match want {
            Some(w) if got != w || flag => return Some(format!("{name} {got} vs {w}")),
            None if !flag || got != 0.0 => return Some(format!("{name} should be undefined")),
            _ => {}
        }
    }
    let (p, r) = (m.precision, m.recall);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    if (m.f1 - f1).abs() > 1e-12 {
        return Some(format!("f1 {} vs {f1}", m.f1));
    }
    None
}

/// Random binary scores, n in [1, 200], often with repeated values.
pub fn random_fixture(rng: &mut SeededRng) -> Vec<(f64, usize)> {
    let n = rng.int_inclusive(1, 200);
    let coarse = rng.unit() < 0.5;
    (0..n)
        .map(|_| {
            let y = rng.int_inclusive(0, 1);
            let mut p = (rng.unit() + 0.3 * y as f64).min(1.0);
            if coarse {
                p = (p * 10.0).round() / 10.0;
            }
            (p, y)
        })
        .collect()
}

/// Accuracy of classifying each sample by the nearest class mean of its
/// concatenated payloads, the means estimated from the samples themselves.
pub fn nearest_centroid_accuracy(schema: &DatasetSchema, samples: &[MultimodalSample]) -> f64 {
    let flat = |s: &MultimodalSample| -> Vec<f64> { s.payloads.iter().flat_map(Payload::mean_instance).collect() };
    let width = schema.num_modalities() * schema.input_width;
    let mut sums = vec![vec![0.0; width]; schema.num_classes];
    let mut counts = vec![0usize; schema.num_classes];
    for s in samples {
        sums[s.label].iter_mut().zip(flat(s)).for_each(|(a, b)| *a += b);
        counts[s.label] += 1;
    }
    for (sum, &c) in sums.iter_mut().zip(&counts) {
        sum.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    let correct = samples
        .iter()
        .filter(|s| {
            let x = flat(s);
            let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..schema.num_classes)
                .min_by(|&a, &b| dist(&sums[a]).total_cmp(&dist(&sums[b])))
                .unwrap();
            best == s.label
        })
        .count();
    correct as f64 / samples.len() as f64
}

/// Frozen random encoder and classifier for invariance checks.
pub fn random_model(seed: u64, d: usize, r: usize, kind: ReduceKind) -> (Encoder, SetClassifier) {
    let mut rng = SeededRng::derived(seed, "model");
    let mut cfg = EncoderConfig::new(r, 2, d);
    cfg.backbone_hidden = vec![16];
    cfg.d_z = 8;
    cfg.d_l = 6;
    let mut enc = Encoder::new(cfg, &mut rng).unwrap();
    enc.freeze();
    let clf = SetClassifier::new(&[6, 32, 16, 2], kind, &mut rng).unwrap();
    (enc, clf)
}

/// A set of 1..=2d elements over d modalities with bags of up to 8 instances.
pub fn random_set(rng: &mut SeededRng, d: usize, r: usize) -> SetObservation {
    let q = rng.int_inclusive(1, 2 * d);
    let elements = (0..q)
        .map(|_| {
            let modality = ModalityId(rng.int_inclusive(0, d - 1));
            let vec = |rng: &mut SeededRng| (0..r).map(|_| 3.0 * rng.normal()).collect::<Vec<f64>>();
            let payload = if rng.unit() < 0.5 {
                Payload::Single(vec(rng))
            } else {
                let k = rng.int_inclusive(1, 8);
                Payload::Bag((0..k).map(|_| vec(rng)).collect())
            };
            SetElement { payload, modality }
        })
        .collect();
    SetObservation {
        elements,
        label: None,
        sample_id: "perm".into(),
    }
}

pub fn logits(enc: &Encoder, clf: &SetClassifier, s: &SetObservation) -> Vec<f64> {
    let mut tape = Tape::new();
    let out = clf.f_forward(&mut tape, enc, s).unwrap();
    tape.value(out).to_vec()
}

/// Largest `|f(S) - f(πS)|_∞` over `perms` random permutations of each of
/// `n_sets` random sets. Bag instance order is shuffled too.
pub fn max_permutation_deviation(seed: u64, n_sets: usize, perms: usize) -> f64 {
    let mut rng = SeededRng::derived(seed, "perm");
    let mut worst: f64 = 0.0;
    let kinds = [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max];
    let models: Vec<_> = (1..=4)
        .flat_map(|d| kinds.iter().map(move |&k| (d, k)))
        .map(|(d, k)| (d, random_model(seed ^ (d as u64) << 8, d, 5, k)))
        .collect();
    for i in 0..n_sets {
        let (d, (enc, clf)) = &models[i % models.len()];
        let s = random_set(&mut rng, *d, 5);
        let base = logits(enc, clf, &s);
        for _ in 0..perms {
            let mut p = s.clone();
            rng.shuffle(&mut p.elements);
            for el in &mut p.elements {
                if let Payload::Bag(xs) = &mut el.payload {
                    rng.shuffle(xs);
                }
            }
            let out = logits(enc, clf, &p);
            for (a, b) in base.iter().zip(&out) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}
