//! Python bindings: schemas, synthetic datasets, training, prediction and metrics.

use std::path::PathBuf;

use hypermm::data::{
    apply_missingness, generate as gen_samples, to_set, Dataset, DatasetSchema, GeneratorConfig, Mechanism, Payload,
};
use hypermm::eval::{compute_metrics as metrics, MetricSet};
use hypermm::hyperlayer::ModalityId;
use hypermm::ndiff::rng::mix_seed;
use hypermm::ndiff::Checkpoint;
use hypermm::setnet::{SetElement, SetObservation};
use hypermm::trainer::{run_full, HyperMM, TrainConfig};
use hypermm::Error;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numeric { .. } | Error::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Contract(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &MetricSet) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("auc", m.auc)?;
    d.set_item("f1", m.f1)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("n_eval", m.n_eval)?;
    let mut undefined = Vec::new();
    for (name, flag) in [
        ("auc", m.undefined.auc),
        ("precision", m.undefined.precision),
        ("recall", m.undefined.recall),
    ] {
        if flag {
            undefined.push(name);
        }
    }
    d.set_item("undefined", undefined)?;
    Ok(d)
}

#[pyclass(name = "Schema", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchema {
    inner: DatasetSchema,
}

#[pymethods]
impl PySchema {
    #[new]
    #[pyo3(signature = (modalities, input_width, num_classes, bags=None))]
    fn new(modalities: Vec<String>, input_width: usize, num_classes: usize, bags: Option<Vec<bool>>) -> PyResult<Self> {
        let refs: Vec<&str> = modalities.iter().map(String::as_str).collect();
        let mut inner = DatasetSchema::new(&refs, input_width, num_classes);
        if let Some(b) = bags {
            inner.bags = b;
        }
        inner.validate().map_err(py_err)?;
        Ok(PySchema { inner })
    }

    #[getter]
    fn modalities(&self) -> Vec<String> {
        self.inner.modalities.clone()
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.inner.input_width
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    fn __repr__(&self) -> String {
        format!(
            "Schema(modalities={:?}, input_width={}, num_classes={})",
            self.inner.modalities, self.inner.input_width, self.inner.num_classes
        )
    }
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: Dataset::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    /// Fraction of samples missing each modality.
    fn missing_rates(&self) -> Vec<f64> {
        self.inner.missing_rates()
    }

    #[getter]
    fn schema(&self) -> PySchema {
        PySchema {
            inner: self.inner.schema.clone(),
        }
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.samples.iter().map(|s| s.label).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }
}

/// Synthetic Gaussian-cluster data with missing modalities.
#[pyfunction]
#[pyo3(signature = (schema, n, seed, missing_rate=0.0, mechanism="mcar", k=None, class_sep=10.0, noise_sigma=0.5))]
#[allow(clippy::too_many_arguments)]
fn generate(
    schema: &PySchema,
    n: usize,
    seed: u64,
    missing_rate: f64,
    mechanism: &str,
    k: Option<usize>,
    class_sep: f64,
    noise_sigma: f64,
) -> PyResult<PyDataset> {
    let gen = GeneratorConfig {
        class_sep,
        noise_sigma,
        ..GeneratorConfig::default()
    };
    let mech = Mechanism::parse(mechanism, k).map_err(py_err)?;
    let samples = gen_samples(&schema.inner, n, seed, &gen).map_err(py_err)?;
    let masked = apply_missingness(&samples, missing_rate, mech, mix_seed(seed, "mask")).map_err(py_err)?;
    Ok(PyDataset {
        inner: Dataset::new(schema.inner.clone(), masked).map_err(py_err)?,
    })
}

#[pyclass(name = "TrainConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    fn new() -> Self {
        PyTrainConfig {
            inner: TrainConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: TrainConfig::load(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: TrainConfig::from_toml(text).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.run.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.run.seed = seed;
    }

    #[getter]
    fn two_steps(&self) -> bool {
        self.inner.run.two_steps
    }

    #[setter]
    fn set_two_steps(&mut self, on: bool) {
        self.inner.run.two_steps = on;
    }

    /// Sets the epoch cap of both phases.
    fn set_max_epochs(&mut self, epochs: usize) {
        self.inner.phase1.max_epochs = epochs;
        self.inner.phase2.max_epochs = epochs;
    }
}

#[pyclass(name = "HyperMM", frozen)]
struct PyHyperMM {
    inner: HyperMM,
}

impl PyHyperMM {
    fn to_set(&self, elements: Vec<(String, Bound<'_, PyAny>)>) -> PyResult<SetObservation> {
        let mut out = Vec::with_capacity(elements.len());
        for (name, value) in elements {
            let modality: ModalityId = self
                .inner
                .schema
                .modality(&name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown modality `{name}`")))?;
            let payload = match value.extract::<Vec<f64>>() {
                Ok(v) => Payload::Single(v),
                Err(_) => Payload::Bag(value.extract::<Vec<Vec<f64>>>()?),
            };
            out.push(SetElement { payload, modality });
        }
        Ok(SetObservation {
            elements: out,
            label: None,
            sample_id: "py".into(),
        })
    }
}

#[pymethods]
impl PyHyperMM {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(py_err)?;
        Ok(PyHyperMM {
            inner: HyperMM::from_checkpoint(&ck).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_checkpoint().save(&path).map_err(py_err)
    }

    /// Class probabilities for one set of `(modality, payload)` pairs; a
    /// payload is a vector or a list of vectors (a bag). Order is irrelevant.
    fn predict_proba(&self, elements: Vec<(String, Bound<'_, PyAny>)>) -> PyResult<Vec<f64>> {
        let set = self.to_set(elements)?;
        self.inner.predict_proba(&set).map_err(py_err)
    }

    /// Metrics over every sample of `dataset`.
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let sets: Vec<SetObservation> = dataset.inner.samples.iter().map(to_set).collect();
        let m = self.inner.evaluate(&sets).map_err(py_err)?;
        metrics_dict(py, &m)
    }

    #[getter]
    fn encoder_checksum(&self) -> String {
        self.inner.encoder.checksum()
    }
}

/// Runs the full pipeline; returns the model and the JSON training report.
#[pyfunction]
fn train(config: &PyTrainConfig, dataset: &PyDataset) -> PyResult<(PyHyperMM, String)> {
    let (model, report) = run_full(&config.inner, &dataset.inner).map_err(py_err)?;
    Ok((PyHyperMM { inner: model }, report.to_json()))
}

#[pyfunction]
#[pyo3(signature = (scores, labels, positive_class=1))]
fn compute_metrics<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    labels: Vec<usize>,
    positive_class: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let pairs: Vec<(f64, usize)> = scores.into_iter().zip(labels).collect();
    let m = metrics(&pairs, positive_class).map_err(py_err)?;
    metrics_dict(py, &m)
}

#[pymodule]
fn hypermm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchema>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyHyperMM>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    Ok(())
}
