//! Synthetic multimodal datasets, missingness masks and splits.

pub mod impute;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperlayer::ModalityId;
use crate::ndiff::SeededRng;
use crate::setnet::{SetElement, SetObservation};

pub use io::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub modalities: Vec<String>,
    pub input_width: usize,
    pub num_classes: usize,
    /// Per modality: does it contribute a bag of instances?
    pub bags: Vec<bool>,
}

impl DatasetSchema {
    pub fn new(modalities: &[&str], input_width: usize, num_classes: usize) -> Self {
        DatasetSchema {
            modalities: modalities.iter().map(|s| s.to_string()).collect(),
            input_width,
            num_classes,
            bags: vec![false; modalities.len()],
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality(&self, name: &str) -> Option<ModalityId> {
        self.modalities.iter().position(|m| m == name).map(ModalityId)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.modalities.len();
        if d == 0 {
            return Err(Error::arg("schema needs at least one modality"));
        }
        if self.input_width == 0 {
            return Err(Error::arg("schema input_width must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::arg("schema needs at least two classes"));
        }
        if self.bags.len() != d {
            return Err(Error::arg(format!(
                "schema lists {d} modalities but {} bag flags",
                self.bags.len()
            )));
        }
        let mut names = self.modalities.clone();
        names.sort();
        names.dedup();
        if names.len() != d {
            return Err(Error::arg("modality names must be unique"));
        }
        Ok(())
    }
}

/// One modality's observation: a single payload or a bag of instances.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Single(Vec<f64>),
    Bag(Vec<Vec<f64>>),
}

impl Payload {
    pub fn instances(&self) -> &[Vec<f64>] {
        match self {
            Payload::Single(x) => std::slice::from_ref(x),
            Payload::Bag(xs) => xs,
        }
    }

    pub fn is_bag(&self) -> bool {
        matches!(self, Payload::Bag(_))
    }

    /// Elementwise mean over instances (the payload itself when single).
    pub fn mean_instance(&self) -> Vec<f64> {
        let xs = self.instances();
        let mut out = vec![0.0; xs[0].len()];
        for x in xs {
            out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
        }
        let n = xs.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub sample_id: String,
    pub label: usize,
    pub payloads: Vec<Payload>,
}

/// `v` with `true` marking a missing modality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingnessMask(pub Vec<bool>);

impl MissingnessMask {
    pub fn none(d: usize) -> Self {
        MissingnessMask(vec![false; d])
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.0[i]
    }

    /// Number of observed modalities, `q`.
    pub fn observed(&self) -> usize {
        self.0.iter().filter(|&&m| !m).count()
    }

    pub fn bits(&self) -> String {
        self.0.iter().map(|&m| if m { '1' } else { '0' }).collect()
    }
}

/// A sample with `na` slots: `slots[i]` is `None` exactly when `v_i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSample {
    pub sample_id: String,
    pub label: usize,
    pub slots: Vec<Option<Payload>>,
    pub mask: MissingnessMask,
}

impl MaskedSample {
    pub fn complete(s: MultimodalSample) -> Self {
        let d = s.payloads.len();
        MaskedSample {
            sample_id: s.sample_id,
            label: s.label,
            slots: s.payloads.into_iter().map(Some).collect(),
            mask: MissingnessMask::none(d),
        }
    }

    pub fn with_mask(s: &MultimodalSample, mask: MissingnessMask) -> Result<Self> {
        if mask.0.len() != s.payloads.len() {
            return Err(Error::dim(format!(
                "mask of length {} for {} modalities",
                mask.0.len(),
                s.payloads.len()
            )));
        }
        let slots = s
            .payloads
            .iter()
            .zip(&mask.0)
            .map(|(p, &missing)| (!missing).then(|| p.clone()))
            .collect();
        Ok(MaskedSample {
            sample_id: s.sample_id.clone(),
            label: s.label,
            slots,
            mask,
        })
    }

    pub fn observed(&self) -> impl Iterator<Item = (ModalityId, &Payload)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (ModalityId(i), p)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Radius of the sphere the class centroids are drawn from.
    pub class_sep: f64,
    pub noise_sigma: f64,
    /// Per-modality noise override; `None` uses `noise_sigma` everywhere.
    #[serde(default)]
    pub modality_noise: Option<Vec<f64>>,
    /// Inclusive instance-count range for bag modalities.
    pub bag_size: [usize; 2],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            class_sep: 10.0,
            noise_sigma: 0.5,
            modality_noise: None,
            bag_size: [2, 8],
        }
    }
}

impl GeneratorConfig {
    pub fn sigma(&self, modality: usize) -> f64 {
        self.modality_noise.as_ref().map_or(self.noise_sigma, |s| s[modality])
    }

    fn validate(&self, d: usize) -> Result<()> {
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return Err(Error::arg(format!("class_sep must be > 0, got {}", self.class_sep)));
        }
        let sigmas = self.modality_noise.clone().unwrap_or_default();
        if let Some(s) = &self.modality_noise {
            if s.len() != d {
                return Err(Error::arg(format!(
                    "modality_noise has {} entries for {d} modalities",
                    s.len()
                )));
            }
        }
        for s in std::iter::once(self.noise_sigma).chain(sigmas) {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::arg(format!("noise sigma must be >= 0, got {s}")));
            }
        }
        let [lo, hi] = self.bag_size;
        if lo == 0 || lo > hi {
            return Err(Error::arg(format!("invalid bag size range {lo}..={hi}")));
        }
        Ok(())
    }
}

/// Class-conditional Gaussian blobs per modality.
///
/// Every `(class, modality)` pair gets a centroid on the sphere of radius
/// `class_sep`; payloads are that centroid plus isotropic noise. Labels are
/// balanced to within one sample.
pub fn generate(schema: &DatasetSchema, n: usize, seed: u64, gen: &GeneratorConfig) -> Result<Vec<MultimodalSample>> {
    schema.validate()?;
    gen.validate(schema.num_modalities())?;
    if n == 0 {
        return Err(Error::arg("n must be >= 1"));
    }
    let r = schema.input_width;
    let d = schema.num_modalities();
    let c = schema.num_classes;

    let mut rng = SeededRng::derived(seed, "centroids");
    let centroids: Vec<Vec<Vec<f64>>> = (0..c)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let dir: Vec<f64> = (0..r).map(|_| rng.normal()).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    dir.into_iter().map(|v| v / norm * gen.class_sep).collect()
                })
                .collect()
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    SeededRng::derived(seed, "labels").shuffle(&mut labels);

    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = SeededRng::derived(seed, &format!("sample/{i}"));
            let payloads = (0..d)
                .map(|m| {
                    let sigma = gen.sigma(m);
                    let draw = |rng: &mut SeededRng| -> Vec<f64> {
                        centroids[label][m].iter().map(|mu| mu + sigma * rng.normal()).collect()
                    };
                    if schema.bags[m] {
                        let k = rng.int_inclusive(gen.bag_size[0], gen.bag_size[1]);
                        Payload::Bag((0..k).map(|_| draw(&mut rng)).collect())
                    } else {
                        Payload::Single(draw(&mut rng))
                    }
                })
                .collect();
            MultimodalSample {
                sample_id: format!("s{i:06}"),
                label,
                payloads,
            }
        })
        .collect();
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Each modality dropped independently.
    Mcar,
    /// Only modality `k` may be dropped.
    ModalityKOnly(usize),
}

impl Mechanism {
    pub fn parse(name: &str, k: Option<usize>) -> Result<Self> {
        match (name, k) {
            ("mcar" | "MCAR", _) => Ok(Mechanism::Mcar),
            ("modality_k_only", Some(k)) => Ok(Mechanism::ModalityKOnly(k)),
            ("modality_k_only", None) => Err(Error::arg("modality_k_only needs k")),
            (other, _) => Err(Error::arg(format!("unknown missingness mechanism `{other}`"))),
        }
    }
}

/// Masks modalities at rate `p`. Draws that would leave a sample with no
/// observed modality are redrawn, so every output has `q >= 1`.
pub fn apply_missingness(
    samples: &[MultimodalSample],
    p: f64,
    mechanism: Mechanism,
    seed: u64,
) -> Result<Vec<MaskedSample>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("missing rate must be in [0, 1), got {p}")));
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d = s.payloads.len();
            if let Mechanism::ModalityKOnly(k) = mechanism {
                if k >= d {
                    return Err(Error::arg(format!("modality {k} out of range for {d} modalities")));
                }
            }
            if p == 0.0 {
                return MaskedSample::with_mask(s, MissingnessMask::none(d));
            }
            let mut rng = SeededRng::derived(seed, &format!("mask/{i}"));
            let mask = loop {
                let v: Vec<bool> = (0..d)
                    .map(|m| match mechanism {
                        Mechanism::Mcar => rng.unit() < p,
                        Mechanism::ModalityKOnly(k) => m == k && rng.unit() < p,
                    })
                    .collect();
                if v.iter().any(|&missing| !missing) {
                    break MissingnessMask(v);
                }
            };
            MaskedSample::with_mask(s, mask)
        })
        .collect()
}

/// Observed `(payload, modality)` pairs in ascending modality order.
pub fn to_set(ms: &MaskedSample) -> SetObservation {
    SetObservation {
        elements: ms
            .observed()
            .map(|(m, p)| SetElement {
                payload: p.clone(),
                modality: m,
            })
            .collect(),
        label: Some(ms.label),
        sample_id: ms.sample_id.clone(),
    }
}

/// Seeded shuffle followed by a cut into train/validation/test.
pub fn split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if ratios.iter().any(|&r| r.is_nan() || r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let n = items.len();
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::derived(seed, "split").shuffle(&mut order);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}
