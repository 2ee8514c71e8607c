//! Python bindings: datasets, the synthetic generator, baselines, relation
//! tuples, configs and single training runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use relamix::baselines::{run_baselines, Metric};
use relamix::data::{self, Domain, FeatureDataset, FeatureMatrix, SnippetSequence};
use relamix::experiment::{self, apply_ablations, RunInputs};
use relamix::train::{eval_plan_seed, evaluate, ExperimentConfig};
use relamix::{relation, sdfm, synthetic, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::ManifestMissing(_) | Error::NoRuns(_) => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A labelled set of snippet feature sequences sharing one shape.
#[pyclass(name = "Dataset", module = "pyrelamix", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: FeatureDataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from `(sample_id, label, domain, rows)` tuples.
    #[staticmethod]
    fn from_sequences(
        sequences: Vec<(String, usize, String, Vec<Vec<f32>>)>,
        class_count: usize,
    ) -> PyResult<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| PyValueError::new_err("no sequences given"))?;
        let (t, d) = (first.3.len(), first.3.first().map_or(0, Vec::len));
        let mut seqs = Vec::with_capacity(sequences.len());
        for (id, label, domain, rows) in sequences {
            let domain: Domain = domain.parse().map_err(to_py)?;
            let m = FeatureMatrix::from_rows(&rows).map_err(to_py)?;
            seqs.push(SnippetSequence::new(id, label, domain, m).map_err(to_py)?);
        }
        let inner = FeatureDataset::new(seqs, class_count, t, d).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::read_dataset(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::write_dataset(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    #[getter]
    fn snippet_count(&self) -> usize {
        self.inner.snippet_count()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    fn sample_ids(&self) -> Vec<String> {
        self.inner
            .sequences()
            .iter()
            .map(|s| s.sample_id.clone())
            .collect()
    }

    /// Feature rows of the `index`-th sequence (sorted by sample id).
    fn features(&self, index: usize) -> PyResult<Vec<Vec<f32>>> {
        let s = self
            .inner
            .sequences()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        Ok(s.features.to_rows())
    }

    fn digest(&self) -> String {
        experiment::dataset_digest(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(len={}, classes={}, snippets={}, dim={})",
            self.inner.len(),
            self.inner.class_count(),
            self.inner.snippet_count(),
            self.inner.dim()
        )
    }
}

/// Training configuration. Construct with `Config()` or `Config.desk()`.
#[pyclass(name = "Config", module = "pyrelamix", skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: ExperimentConfig::default(),
        }
    }

    /// Shortened schedule for quick runs.
    #[staticmethod]
    fn desk() -> Self {
        Self {
            inner: ExperimentConfig::desk_scale(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Comma-separated ablation names, e.g. `"sdfm,cdia"`.
    fn ablate(&mut self, names: &str) -> PyResult<()> {
        apply_ablations(&mut self.inner, names).map_err(to_py)
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.ablation.label()
    }

    #[getter]
    fn get_shot_count(&self) -> usize {
        self.inner.shot_count
    }

    #[setter]
    fn set_shot_count(&mut self, v: usize) {
        self.inner.shot_count = v;
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn get_epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }
}

/// Returns `(source, target_pool, target_test)`.
#[pyfunction]
#[pyo3(signature = (class_count, per_class_source, per_class_target, snippet_count, dim, rotation=0.35, bias=2.0, noise=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_pair(
    class_count: usize,
    per_class_source: usize,
    per_class_target: usize,
    snippet_count: usize,
    dim: usize,
    rotation: f64,
    bias: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
    let shift = synthetic::DomainShiftSpec {
        rotation_strength: rotation,
        bias_strength: bias,
        noise_std: noise,
        seed,
    };
    let (s, p, t) = synthetic::generate_pair(
        class_count,
        per_class_source,
        per_class_target,
        snippet_count,
        dim,
        &shift,
    )
    .map_err(to_py)?;
    Ok((
        PyDataset { inner: s },
        PyDataset { inner: p },
        PyDataset { inner: t },
    ))
}

/// Random, kNN, nearest-center and nearest-neighbor accuracies as dicts.
#[pyfunction]
#[pyo3(signature = (source, test, seed=0, cosine=false))]
fn baselines<'py>(
    py: Python<'py>,
    source: &PyDataset,
    test: &PyDataset,
    seed: u64,
    cosine: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let metric = if cosine {
        Metric::Cosine
    } else {
        Metric::Euclidean
    };
    let reports = run_baselines(&source.inner, &test.inner, seed, metric).map_err(to_py)?;
    json_to_py(py, &reports)
}

/// All index tuples of size `scale` over `length` snippets, lexicographic.
#[pyfunction]
fn relation_tuples(length: usize, scale: usize) -> PyResult<Vec<Vec<usize>>> {
    if scale < 2 || scale > length {
        return Err(PyValueError::new_err(format!(
            "scale must be in [2, {length}], got {scale}"
        )));
    }
    Ok(relation::all_tuples(length, scale)
        .into_iter()
        .map(|t| t.to_vec())
        .collect())
}

/// Per-class selected sample ids.
#[pyfunction]
fn few_shot_split(pool: &PyDataset, shot_count: usize, seed: u64) -> PyResult<Vec<Vec<String>>> {
    Ok(data::sample_few_shot_split(&pool.inner, shot_count, seed)
        .map_err(to_py)?
        .selected_ids)
}

/// Per-class snippet means then stds, as a dataset.
#[pyfunction]
fn source_statistics(source: &PyDataset) -> PyResult<PyDataset> {
    let stats = sdfm::compute_source_statistics(&source.inner).map_err(to_py)?;
    Ok(PyDataset {
        inner: stats.to_dataset().map_err(to_py)?,
    })
}

/// Trains one configuration, writes its run directory under `out`, and
/// returns `(metrics, run_dir)`.
#[pyfunction]
fn train_run<'py>(
    py: Python<'py>,
    source: &PyDataset,
    target_pool: &PyDataset,
    test: &PyDataset,
    config: &PyConfig,
    out: PathBuf,
) -> PyResult<(Bound<'py, PyAny>, String)> {
    let inputs = RunInputs {
        source: &source.inner,
        target_pool: &target_pool.inner,
        test: &test.inner,
    };
    let (metrics, dir) = py
        .detach(|| experiment::execute_run(inputs, &config.inner, &out))
        .map_err(to_py)?;
    Ok((json_to_py(py, &metrics)?, dir.display().to_string()))
}

/// Re-evaluates a run directory's checkpoint; returns the accuracy.
#[pyfunction]
fn evaluate_run(run_dir: PathBuf, test: &PyDataset) -> PyResult<f64> {
    let text = std::fs::read_to_string(run_dir.join("config.toml"))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(to_py)?;
    let params = relamix::model::read_checkpoint(&run_dir.join("checkpoint")).map_err(to_py)?;
    let report = evaluate(
        &params,
        cfg.ablation.switches(),
        &test.inner,
        eval_plan_seed(&cfg),
    )
    .map_err(to_py)?;
    Ok(report.accuracy)
}

#[pymodule]
fn pyrelamix(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(generate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(baselines, m)?)?;
    m.add_function(wrap_pyfunction!(relation_tuples, m)?)?;
    m.add_function(wrap_pyfunction!(few_shot_split, m)?)?;
    m.add_function(wrap_pyfunction!(source_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(train_run, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_run, m)?)?;
    Ok(())
}
