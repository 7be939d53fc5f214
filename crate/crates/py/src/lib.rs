//! Python bindings. Structured results cross the boundary as plain
//! dicts and lists (serialized through JSON).

use std::path::PathBuf;
use std::sync::Arc;

use dialogctl::dialog::corpus::{replay_corpus, Corpus, Sequence};
use dialogctl::dialog::{DomainHooks, Engine, SelectionMode};
use dialogctl::nn::ModelKind;
use dialogctl::phone::{self, PhoneDomain};
use dialogctl::rl::{rl_experiment as run_rl, RlConfig};
use dialogctl::service::{self, CorrectionRequest, JobSpec, ServiceConfig};
use dialogctl::sl::{self, EvalConfig, SlConfig};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: dialogctl::Error) -> PyErr {
    use dialogctl::Error as E;
    match e {
        E::NoSuchSession(_) | E::NoSuchJob(_) => PyKeyError::new_err(e.to_string()),
        E::InvalidArgument(_)
        | E::MaskedCorpusAction { .. }
        | E::CorpusParse { .. }
        | E::UnknownTemplate(_)
        | E::Config(_)
        | E::Checkpoint(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = py
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    kind.parse().map_err(err)
}

fn sequences(corpus: Option<&str>) -> PyResult<Vec<Sequence>> {
    let engine = Engine::new(Arc::new(PhoneDomain::builtin()));
    let corpus = match corpus {
        Some(text) => Corpus::parse(text).map_err(err)?,
        None => phone::load_corpus(),
    };
    replay_corpus(&engine, &corpus).map_err(err)
}

/// Text of the bundled phone corpus.
#[pyfunction]
fn corpus_text() -> &'static str {
    phone::corpus_text()
}

/// Names of the domain's action templates, indexed by action id.
#[pyfunction]
fn action_names() -> Vec<String> {
    PhoneDomain::builtin()
        .templates()
        .iter()
        .map(|t| t.name.clone())
        .collect()
}

/// Trains a fresh model on the corpus and returns the training report.
#[pyfunction]
#[pyo3(signature = (kind="lstm", hidden=32, seed=0, corpus=None, max_epochs=2000))]
fn train_sl(
    py: Python<'_>,
    kind: &str,
    hidden: usize,
    seed: u64,
    corpus: Option<&str>,
    max_epochs: usize,
) -> PyResult<Py<PyAny>> {
    let kind = parse_kind(kind)?;
    let seqs = sequences(corpus)?;
    let report = py.detach(|| {
        let layout = PhoneDomain::builtin().layout();
        let (mut p, mut o) = sl::fresh_model(kind, layout.dim(), hidden, layout.actions, seed)?;
        let cfg = SlConfig {
            max_epochs,
            ..SlConfig::default()
        };
        sl::train_sl(&mut p, &mut o, &seqs, &cfg)
    });
    to_py(py, &report.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (sizes=vec![1, 2, 5, 10, 20], kind="lstm", hidden=32, seed=0))]
fn loo_eval(
    py: Python<'_>,
    sizes: Vec<usize>,
    kind: &str,
    hidden: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg = EvalConfig {
        kind: parse_kind(kind)?,
        hidden,
        seed,
        sl: SlConfig::default(),
    };
    let seqs = sequences(None)?;
    let rows = py
        .detach(|| sl::loo_eval(&seqs, &sizes, &cfg))
        .map_err(err)?;
    to_py(py, &rows)
}

#[pyfunction]
#[pyo3(signature = (kinds=vec!["dnn".to_string(), "rnn".to_string(), "lstm".to_string()], sizes=vec![1, 10, 21], hidden=32, seed=0, plateau=100))]
fn compare_architectures(
    py: Python<'_>,
    kinds: Vec<String>,
    sizes: Vec<usize>,
    hidden: usize,
    seed: u64,
    plateau: usize,
) -> PyResult<Py<PyAny>> {
    let kinds = kinds
        .iter()
        .map(|k| parse_kind(k))
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = EvalConfig {
        kind: ModelKind::Lstm,
        hidden,
        seed,
        sl: SlConfig::with_plateau(plateau),
    };
    let seqs = sequences(None)?;
    let cells = py
        .detach(|| sl::compare_architectures(&seqs, &kinds, &sizes, &cfg))
        .map_err(err)?;
    to_py(py, &cells)
}

/// Runs a policy-gradient experiment. `config` is a dict with any
/// `RlConfig` fields; missing fields take their defaults.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn rl_experiment(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let cfg: RlConfig = match config {
        Some(c) => from_py(py, c)?,
        None => RlConfig::default(),
    };
    let seqs = sequences(None)?;
    let curves = py
        .detach(|| {
            let engine = Engine::new(Arc::new(PhoneDomain::builtin()));
            run_rl(&engine, &seqs, &cfg)
        })
        .map_err(err)?;
    to_py(py, &curves)
}

/// In-process dialog service: sessions, corrections, corpus and jobs.
#[pyclass(frozen)]
struct Service {
    inner: Arc<service::Service>,
}

#[pymethods]
impl Service {
    /// `config` is TOML text in the server's config format.
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(py: Python<'_>, config: Option<&str>) -> PyResult<Self> {
        let cfg = match config {
            Some(text) => ServiceConfig::from_toml(text).map_err(err)?,
            None => ServiceConfig::default(),
        };
        let inner = py.detach(|| service::Service::new(cfg)).map_err(err)?;
        Ok(Service { inner })
    }

    #[getter]
    fn model_version(&self) -> u64 {
        self.inner.model().version
    }

    #[pyo3(signature = (mode="greedy"))]
    fn create_session(&self, mode: &str) -> PyResult<u64> {
        let mode: SelectionMode =
            serde_json::from_value(serde_json::Value::String(mode.to_string()))
                .map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.inner.create_session(mode).map_err(err)
    }

    fn list_sessions(&self) -> Vec<u64> {
        self.inner.list_sessions()
    }

    fn session_info(&self, py: Python<'_>, session: u64) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.session_info(session).map_err(err)?)
    }

    #[pyo3(signature = (session, text=""))]
    fn post_utterance(&self, py: Python<'_>, session: u64, text: &str) -> PyResult<Py<PyAny>> {
        let text = text.to_string();
        let r = py
            .detach(|| self.inner.post_utterance(session, &text))
            .map_err(err)?;
        to_py(py, &r)
    }

    fn transcript(&self, py: Python<'_>, session: u64) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.transcript(session).map_err(err)?)
    }

    fn close_session(&self, session: u64) -> PyResult<()> {
        self.inner.close_session(session).map_err(err)
    }

    /// Replaces the action at `turn` and retrains on the corrected prefix.
    fn correct(
        &self,
        py: Python<'_>,
        session: u64,
        turn: usize,
        action: usize,
    ) -> PyResult<Py<PyAny>> {
        let req = CorrectionRequest {
            session,
            turn,
            action,
        };
        let r = py
            .detach(|| self.inner.submit_correction(req))
            .map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (limit=20))]
    fn uncertainty_queue(&self, py: Python<'_>, limit: usize) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.uncertainty_queue(limit))
    }

    fn corpus_text(&self) -> String {
        self.inner.corpus_text()
    }

    fn put_corpus(&self, py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
        let text = text.to_string();
        let r = py.detach(|| self.inner.put_corpus(&text)).map_err(err)?;
        to_py(py, &r)
    }

    fn reconstructs_corpus(&self) -> PyResult<bool> {
        self.inner.reconstructs_corpus().map_err(err)
    }

    #[pyo3(signature = (path=None))]
    fn save_checkpoint(&self, path: Option<PathBuf>) -> PyResult<PathBuf> {
        self.inner.save_checkpoint(path.as_deref()).map_err(err)
    }

    #[pyo3(signature = (path=None))]
    fn load_checkpoint(&self, path: Option<PathBuf>) -> PyResult<u64> {
        self.inner.load_checkpoint(path.as_deref()).map_err(err)
    }

    /// Starts a background job from a spec dict such as
    /// `{"kind": "loo_eval", "sizes": [1, 20]}` and returns its id.
    fn start_job(&self, py: Python<'_>, spec: &Bound<'_, PyAny>) -> PyResult<u64> {
        let spec: JobSpec = from_py(py, spec)?;
        self.inner.start_job(spec).map_err(err)
    }

    fn job_status(&self, py: Python<'_>, job: u64) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.job_status(job).map_err(err)?)
    }

    fn cancel_job(&self, job: u64) -> PyResult<()> {
        self.inner.cancel_job(job).map_err(err)
    }

    /// Blocks until the job ends and returns its final status.
    fn wait_job(&self, py: Python<'_>, job: u64) -> PyResult<Py<PyAny>> {
        let s = py.detach(|| self.inner.wait_job(job)).map_err(err)?;
        to_py(py, &s)
    }
}

#[pymodule]
fn dialogctl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(corpus_text, m)?)?;
    m.add_function(wrap_pyfunction!(action_names, m)?)?;
    m.add_function(wrap_pyfunction!(train_sl, m)?)?;
    m.add_function(wrap_pyfunction!(loo_eval, m)?)?;
    m.add_function(wrap_pyfunction!(compare_architectures, m)?)?;
    m.add_function(wrap_pyfunction!(rl_experiment, m)?)?;
    m.add_class::<Service>()?;
    Ok(())
}
