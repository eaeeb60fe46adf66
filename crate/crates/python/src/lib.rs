//! Python bindings: the learner loop, synthetic instances, metrics, the
//! experiment harness and annotation sessions.
//!
//! Session calls take and return JSON strings with the same shapes as the
//! HTTP API.

use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rankwise::bounds::bound_from_terms;
use rankwise::data::ItemPool;
use rankwise::harness::{aggregate_files, run_experiment, ExperimentConfig};
use rankwise::learner::{Learner, LearnerConfig, ModelKind};
use rankwise::rng::{substream, Stream};
use rankwise::samplers::{PairSet, SamplerKind};
use rankwise::session::{Answer, CreateRequest, SessionExport, SessionStore as CoreStore};
use rankwise::sim::{self, LogisticAnnotator};
use rankwise::Error;

create_exception!(rankwise_py, ConflictError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::SessionNotFound(_) => PyKeyError::new_err(e.to_string()),
        Error::Conflict(_) | Error::Exhausted => ConflictError::new_err(e.to_string()),
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("bad JSON: {e}"))
}

/// Select/observe loop over a fixed item pool.
#[pyclass(name = "Learner")]
struct PyLearner {
    inner: Learner,
}

#[pymethods]
impl PyLearner {
    #[new]
    #[pyo3(signature = (features, sampler="guro", model=None, seed=0, reg=1.0, refit_stride=1, budget=1000))]
    fn new(
        features: Vec<Vec<f64>>,
        sampler: &str,
        model: Option<&str>,
        seed: u64,
        reg: f64,
        refit_stride: usize,
        budget: usize,
    ) -> PyResult<Self> {
        let kind: SamplerKind = sampler.parse().map_err(to_py)?;
        let mut config = LearnerConfig::new(kind);
        if let Some(m) = model {
            config.model = m.parse::<ModelKind>().map_err(to_py)?;
        }
        config.reg = reg;
        config.refit_stride = refit_stride;
        config.budget = budget;
        let pool = ItemPool::from_rows(&features, None).map_err(to_py)?;
        let inner = Learner::new(pool, config, seed).map_err(to_py)?;
        Ok(PyLearner { inner })
    }

    /// Next pair `(i, j)` to compare, over all pairs or over `pairs` if given.
    #[pyo3(signature = (pairs=None))]
    fn select(&mut self, pairs: Option<Vec<(usize, usize)>>) -> PyResult<(usize, usize)> {
        let eligible = match pairs {
            Some(p) => PairSet::listed(p),
            None => PairSet::all(self.inner.pool().len()),
        };
        self.inner.select(&eligible).map_err(to_py)
    }

    /// Records that `i` beat `j` when `c` is true.
    fn observe(&mut self, i: usize, j: usize, c: bool) -> PyResult<()> {
        self.inner.observe(i, j, c).map_err(to_py)
    }

    fn scores(&self) -> Vec<f64> {
        self.inner.scores()
    }

    fn ranking(&self) -> Vec<usize> {
        self.inner.ranking()
    }

    fn score_std(&self) -> PyResult<Vec<f64>> {
        self.inner.score_std().map_err(to_py)
    }

    fn theta(&self) -> Option<Vec<f64>> {
        self.inner.state().theta().map(|t| t.iter().copied().collect())
    }

    fn history(&self) -> Vec<(usize, usize, bool)> {
        self.inner.history().records().iter().map(|r| (r.i, r.j, r.c)).collect()
    }

    #[getter]
    fn step(&self) -> usize {
        self.inner.history().len()
    }

    #[getter]
    fn sampler(&self) -> String {
        self.inner.config().sampler.kind.to_string()
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.config().model.name().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.pool().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Learner(sampler={}, model={}, items={}, step={})",
            self.sampler(),
            self.model(),
            self.inner.pool().len(),
            self.step()
        )
    }
}

/// Draws a synthetic instance and returns `(features, theta_star, true_scores)`.
#[pyfunction]
#[pyo3(signature = (n, d, theta_range=3.0, seed=0))]
fn generate_instance(n: usize, d: usize, theta_range: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let mut rng = substream(seed, Stream::Instance);
    let inst = sim::generate_instance(n, d, theta_range, &mut rng).map_err(to_py)?;
    let scores = inst.pool.true_scores().map(<[f64]>::to_vec).unwrap_or_default();
    Ok((inst.pool.rows(), inst.theta_star.iter().copied().collect(), scores))
}

/// Logistic annotator answering `P(i beats j) = σ(λ θ*ᵀ(x_i − x_j))`.
#[pyclass(name = "LogisticAnnotator")]
struct PyAnnotator {
    inner: LogisticAnnotator,
    pool: ItemPool,
}

#[pymethods]
impl PyAnnotator {
    #[new]
    #[pyo3(signature = (features, theta_star, noise=1.0, seed=0))]
    fn new(features: Vec<Vec<f64>>, theta_star: Vec<f64>, noise: f64, seed: u64) -> PyResult<Self> {
        let pool = ItemPool::from_rows(&features, None).map_err(to_py)?;
        let theta = rankwise::nalgebra::DVector::from_vec(theta_star);
        let inner = LogisticAnnotator::new(theta, noise, substream(seed, Stream::Annotator)).map_err(to_py)?;
        Ok(PyAnnotator { inner, pool })
    }

    fn annotate(&mut self, i: usize, j: usize) -> PyResult<bool> {
        let z = self.pool.diff_vector(i, j).map_err(to_py)?;
        Ok(self.inner.annotate(&z))
    }
}

/// Fraction of item pairs ordered differently by `ranking` and `truth`.
#[pyfunction]
fn kendall_tau_error(ranking: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    sim::kendall_tau_error(&ranking, &truth).map_err(to_py)
}

/// Ordering error between the rankings induced by two score vectors.
#[pyfunction]
fn ordering_error(scores: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    sim::ordering_error(&scores, &truth).map_err(to_py)
}

/// Ordering-error bound from the worst concentration terms; returns
/// `(value, approx, vacuous)`.
#[pyfunction]
fn ordering_error_bound(alpha_star: f64, beta_star: f64, dim: usize, t: usize, eps: f64, n: usize) -> (f64, f64, bool) {
    let r = bound_from_terms(alpha_star, beta_star, dim, t, eps, n);
    (r.value, r.approx, r.vacuous)
}

#[pyfunction]
fn sampler_names() -> Vec<&'static str> {
    SamplerKind::ALL.iter().map(|k| k.name()).collect()
}

/// Runs a flat `key = value` experiment config and writes the trajectory CSV.
/// Returns the number of records written.
#[pyfunction]
fn run_config(py: Python<'_>, config: &str, out: PathBuf) -> PyResult<usize> {
    let cfg = ExperimentConfig::parse(config).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    py.detach(|| run_experiment(&cfg, &out)).map(|r| r.len()).map_err(to_py)
}

/// Aggregates trajectory files into a summary CSV at `out`.
#[pyfunction]
fn aggregate(trajectories: Vec<PathBuf>, out: PathBuf) -> PyResult<()> {
    let summary = aggregate_files(&trajectories).map_err(to_py)?;
    let file = std::fs::File::create(&out).map_err(|e| to_py(e.into()))?;
    summary.write_csv(file).map_err(to_py)
}

/// Annotation sessions, in memory or persisted under `data_dir`.
#[pyclass(name = "SessionStore")]
struct PySessionStore {
    inner: CoreStore,
}

#[pymethods]
impl PySessionStore {
    #[new]
    #[pyo3(signature = (data_dir=None))]
    fn new(data_dir: Option<PathBuf>) -> PyResult<Self> {
        let inner = match data_dir {
            Some(dir) => CoreStore::open(Path::new(&dir)).map_err(to_py)?,
            None => CoreStore::in_memory(),
        };
        Ok(PySessionStore { inner })
    }

    /// Creates a session from a JSON create request; returns its id.
    fn create(&self, request: &str) -> PyResult<String> {
        let req: CreateRequest = serde_json::from_str(request).map_err(json_err)?;
        self.inner.create(&req).map_err(to_py)
    }

    fn next(&self, py: Python<'_>, id: &str) -> PyResult<String> {
        let next = py.detach(|| self.inner.next(id)).map_err(to_py)?;
        serde_json::to_string(&next).map_err(json_err)
    }

    fn submit(&self, id: &str, answer: &str) -> PyResult<String> {
        let answer: Answer = serde_json::from_str(answer).map_err(json_err)?;
        let summary = self.inner.submit(id, &answer).map_err(to_py)?;
        serde_json::to_string(&summary).map_err(json_err)
    }

    fn ranking(&self, id: &str) -> PyResult<String> {
        serde_json::to_string(&self.inner.ranking(id).map_err(to_py)?).map_err(json_err)
    }

    fn export(&self, id: &str) -> PyResult<String> {
        serde_json::to_string(&self.inner.export(id).map_err(to_py)?).map_err(json_err)
    }

    fn import_session(&self, export: &str) -> PyResult<String> {
        let export: SessionExport = serde_json::from_str(export).map_err(json_err)?;
        self.inner.import(&export).map_err(to_py)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pymodule]
fn rankwise_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLearner>()?;
    m.add_class::<PyAnnotator>()?;
    m.add_class::<PySessionStore>()?;
    m.add_function(wrap_pyfunction!(generate_instance, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau_error, m)?)?;
    m.add_function(wrap_pyfunction!(ordering_error, m)?)?;
    m.add_function(wrap_pyfunction!(ordering_error_bound, m)?)?;
    m.add_function(wrap_pyfunction!(sampler_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add("ConflictError", m.py().get_type::<ConflictError>())?;
    Ok(())
}
