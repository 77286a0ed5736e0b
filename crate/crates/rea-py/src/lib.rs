//! Python bindings: datasets, splits, training and prediction.
//!
//! Configuration and reports cross the boundary as JSON strings so Python
//! callers can use plain `json.loads` / `json.dumps`; handles wrap the
//! heavyweight objects.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rea_core::data::{self, Partition};
use rea_core::geo::{self, GeoIndex};
use rea_core::metrics;
use rea_core::model::Variant;
use rea_core::neural;
use rea_core::train::{EvalContext, Prepared, TrainConfig, TrainOutput};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_json<T: ::serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(runtime_error)
}

/// An immutable transaction dataset.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn ids(&self) -> Vec<u64> {
        self.inner.records().iter().map(|r| r.id).collect()
    }

    /// One record as a JSON string.
    fn record_json(&self, id: u64) -> PyResult<String> {
        let rec = self
            .inner
            .get(id)
            .ok_or_else(|| value_error(format!("unknown id {id}")))?;
        to_json(rec)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} records, {} features)",
            self.inner.len(),
            self.inner.feature_dim()
        )
    }
}

/// A leakage-safe partition of record ids.
#[pyclass(name = "Split", frozen)]
struct PySplit {
    inner: data::SplitSpec,
}

#[pymethods]
impl PySplit {
    #[getter]
    fn offset_ids(&self) -> Vec<u64> {
        self.inner.offset_ids.clone()
    }

    #[getter]
    fn train_ids(&self) -> Vec<u64> {
        self.inner.train_ids.clone()
    }

    #[getter]
    fn val_ids(&self) -> Vec<u64> {
        self.inner.val_ids.clone()
    }

    #[getter]
    fn test_ids(&self) -> Vec<u64> {
        self.inner.test_ids.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Split(offset={}, train={}, val={}, test={})",
            self.inner.offset_ids.len(),
            self.inner.train_ids.len(),
            self.inner.val_ids.len(),
            self.inner.test_ids.len()
        )
    }
}

fn parse_partition(name: &str) -> PyResult<Partition> {
    match name {
        "train" => Ok(Partition::Train),
        "val" => Ok(Partition::Val),
        "test" => Ok(Partition::Test),
        other => Err(value_error(format!(
            "partition must be train|val|test, got '{other}'"
        ))),
    }
}

/// A trained model bundled with everything evaluation needs.
#[pyclass(name = "Trained", frozen)]
struct PyTrained {
    dataset: data::Dataset,
    split: data::SplitSpec,
    config: TrainConfig,
    output: TrainOutput,
}

impl PyTrained {
    fn with_context<T>(
        &self,
        f: impl FnOnce(&EvalContext, &rea_core::train::EmbeddingTable) -> rea_core::Result<T>,
    ) -> PyResult<T> {
        let prepared = Prepared::new(
            &self.dataset,
            self.output.scaler.clone(),
            self.output.transform,
        )
        .map_err(runtime_error)?;
        let index = GeoIndex::build(&self.dataset).map_err(runtime_error)?;
        let ctx = EvalContext::new(&prepared, &index, &self.split, &self.config);
        let (table, _) = self.output.tables.retrieval_table();
        f(&ctx, table).map_err(runtime_error)
    }
}

#[pymethods]
impl PyTrained {
    /// MdAE / MdABRE report for a partition, as JSON.
    fn evaluate(&self, partition: &str) -> PyResult<String> {
        let partition = parse_partition(partition)?;
        let outcome = self.with_context(|ctx, table| {
            rea_core::train::evaluate(&self.output.model, table, ctx, partition)
        })?;
        to_json(&outcome.report)
    }

    /// Prediction with the full comparable breakdown for one record id,
    /// as JSON.
    fn predict(&self, target_id: u64) -> PyResult<String> {
        let record = self
            .dataset
            .get(target_id)
            .cloned()
            .ok_or_else(|| value_error(format!("unknown id {target_id}")))?;
        let (detail, _) = self.with_context(|ctx, table| {
            rea_core::train::predict_detail(&self.output.model, table, ctx, &record)
        })?;
        to_json(&detail)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.output.model.param_count()
    }

    /// Per-epoch training log as a JSON array.
    fn log_json(&self) -> PyResult<String> {
        to_json(&self.output.log)
    }

    /// Flat parameter vector (encoder | gate | decoder).
    fn parameters(&self) -> Vec<f64> {
        self.output.model.flatten()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trained(variant={:?}, params={}, epochs={})",
            self.config.variant,
            self.output.model.param_count(),
            self.output.log.len()
        )
    }
}

/// Generates a synthetic dataset; returns (Dataset, latents JSON).
#[pyfunction]
fn generate_synthetic(config_json: &str) -> PyResult<(PyDataset, String)> {
    let config: data::SynthConfig = serde_json::from_str(config_json).map_err(value_error)?;
    let (dataset, latents) = data::generate_synthetic(&config).map_err(value_error)?;
    Ok((PyDataset { inner: dataset }, to_json(&latents)?))
}

/// Loads a CSV dataset with a schema JSON mapping roles to column names.
#[pyfunction]
fn load_dataset(path: &str, schema_json: &str) -> PyResult<PyDataset> {
    let schema: data::CsvSchema = serde_json::from_str(schema_json).map_err(value_error)?;
    let dataset = data::load_csv(path, &schema).map_err(value_error)?;
    Ok(PyDataset { inner: dataset })
}

/// Chronological split with a retrieval-only offset pool.
#[pyfunction]
fn temporal_split(
    dataset: &PyDataset,
    offset_years: f64,
    train_frac: f64,
    val_frac: f64,
) -> PyResult<PySplit> {
    let split = data::temporal_split(&dataset.inner, offset_years, train_frac, val_frac)
        .map_err(value_error)?;
    Ok(PySplit { inner: split })
}

/// Seeded shuffled split for undated datasets.
#[pyfunction]
fn random_split(
    dataset: &PyDataset,
    seed: u64,
    train_frac: f64,
    val_frac: f64,
) -> PyResult<PySplit> {
    let split =
        data::random_split(&dataset.inner, seed, train_frac, val_frac).map_err(value_error)?;
    Ok(PySplit { inner: split })
}

/// Trains a model; `config_json` mirrors the CLI's train section.
#[pyfunction]
#[pyo3(name = "train")]
fn train_model(dataset: &PyDataset, split: &PySplit, config_json: &str) -> PyResult<PyTrained> {
    let config: TrainConfig = serde_json::from_str(config_json).map_err(value_error)?;
    let output =
        rea_core::train::train(&dataset.inner, &split.inner, &config).map_err(runtime_error)?;
    Ok(PyTrained {
        dataset: dataset.inner.clone(),
        split: split.inner.clone(),
        config,
        output,
    })
}

/// Linear-regression baseline metrics for a partition, as JSON.
#[pyfunction]
fn baseline_linear(dataset: &PyDataset, split: &PySplit, partition: &str) -> PyResult<String> {
    let partition = parse_partition(partition)?;
    let config = TrainConfig {
        variant: Variant::Rea,
        ..TrainConfig::default()
    };
    let prepared = Prepared::fit(&dataset.inner, &split.inner, &config).map_err(value_error)?;
    let report =
        metrics::baseline_linear(&prepared, &split.inner, partition).map_err(runtime_error)?;
    to_json(&report)
}

/// Great-circle distance in meters.
#[pyfunction]
fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    geo::haversine(lat1, lon1, lat2, lon2)
}

/// Candidate-pool size rule N = 3·k1 + 25.
#[pyfunction]
fn candidate_pool_size(k1: usize) -> usize {
    geo::candidate_pool_size(k1)
}

/// Balanced relative error |x − y| / min(x, y).
#[pyfunction]
fn abre(x: f64, y: f64) -> PyResult<f64> {
    metrics::abre(x, y).map_err(value_error)
}

#[pyfunction]
fn mdae(preds: Vec<f64>, truths: Vec<f64>) -> PyResult<f64> {
    metrics::mdae(&preds, &truths).map_err(value_error)
}

#[pyfunction]
fn mdabre(preds: Vec<f64>, truths: Vec<f64>) -> PyResult<f64> {
    metrics::mdabre(&preds, &truths).map_err(value_error)
}

#[pyfunction]
fn selu(x: f64) -> f64 {
    neural::selu(x)
}

#[pyfunction]
fn softmax(scores: Vec<f64>) -> PyResult<Vec<f64>> {
    neural::softmax(&scores).map_err(value_error)
}

#[pymodule]
fn rea_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyTrained>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_split, m)?)?;
    m.add_function(wrap_pyfunction!(random_split, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_linear, m)?)?;
    m.add_function(wrap_pyfunction!(haversine, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_pool_size, m)?)?;
    m.add_function(wrap_pyfunction!(abre, m)?)?;
    m.add_function(wrap_pyfunction!(mdae, m)?)?;
    m.add_function(wrap_pyfunction!(mdabre, m)?)?;
    m.add_function(wrap_pyfunction!(selu, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    Ok(())
}
