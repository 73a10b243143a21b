//! Python module `t2ijudge_py`. Structured results (profiles, ledgers,
//! reports) cross the boundary as plain dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use t2ijudge::lingmetrics::{self, Syntax};
use t2ijudge::prompt;
use t2ijudge::runner::{self, Gateways, Mode, RunConfig, RunError, RunLedger};
use t2ijudge::scoring;
use t2ijudge::stats::{self, RankVector};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Config(_) | RunError::InvalidArgument(_) | RunError::ZeroWeights => PyValueError::new_err(e.to_string()),
        RunError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyfunction]
fn kendall_tau_b(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::kendall_tau_b(&x, &y).map_err(value_err)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::spearman(&x, &y).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (candidates, references, max_n = 4))]
fn corpus_bleu(candidates: Vec<String>, references: Vec<String>, max_n: usize) -> PyResult<f64> {
    stats::corpus_bleu(&candidates, &references, max_n).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (candidate, reference, max_n = 4))]
fn sentence_bleu(candidate: &str, reference: &str, max_n: usize) -> PyResult<f64> {
    stats::sentence_bleu(candidate, reference, max_n).map_err(value_err)
}

#[pyfunction]
fn count_syllables(word: &str) -> usize {
    lingmetrics::count_syllables(word)
}

#[pyfunction]
fn flesch_kincaid(text: &str) -> PyResult<f64> {
    lingmetrics::flesch_kincaid(text).map_err(value_err)
}

/// Yngve score of a bracketed tree such as `(S (NP (DT a) (NN dog)) (VP ran))`.
#[pyfunction]
fn yngve_score(bracketed: &str) -> PyResult<f64> {
    let tree = lingmetrics::parse_bracketed_tree(bracketed).map_err(value_err)?;
    Ok(lingmetrics::yngve_score(&tree))
}

/// Difficulty metrics of a prompt. With `tree` the Yngve score comes from
/// that parse, otherwise from the right-branching fallback.
#[pyfunction]
#[pyo3(signature = (text, tree = None))]
fn difficulty_profile(py: Python<'_>, text: &str, tree: Option<&str>) -> PyResult<Py<PyAny>> {
    let parsed = tree.map(lingmetrics::parse_bracketed_tree).transpose().map_err(value_err)?;
    let syntax = match &parsed {
        Some(t) => Syntax::Parsed(t),
        None => Syntax::Fallback,
    };
    let p = lingmetrics::difficulty_profile(text, syntax, None).map_err(value_err)?;
    to_py(py, &p)
}

/// Name of the adaptive rewrite bin for a score in [0, 1].
#[pyfunction]
fn select_bin(score: f64) -> PyResult<&'static str> {
    prompt::select_bin(score).map(|b| b.name()).map_err(value_err)
}

#[pyfunction]
fn parse_prompt_reply(raw: &str) -> PyResult<String> {
    prompt::parse_prompt_reply(raw).map_err(value_err)
}

/// Questions parsed from a `Q:` / `Choices:` / `A:` block, as dicts.
#[pyfunction]
fn parse_mcq_block(py: Python<'_>, raw: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &scoring::parse_mcq_block(raw).questions)
}

/// Normalized P(yes) from first-token logprobs, or None without yes/no mass.
#[pyfunction]
fn yes_probability(logprobs: BTreeMap<String, f64>) -> Option<f64> {
    scoring::yes_probability(&logprobs)
}

#[pyfunction]
fn weighted_mean(scores: Vec<f64>, weights: Vec<f64>) -> PyResult<f64> {
    runner::weighted_mean(&scores, &weights).map_err(run_err)
}

#[pyclass(name = "RunConfig", module = "t2ijudge_py", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml(t).map_err(run_err)?,
            None => RunConfig::default(),
        };
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig { inner: RunConfig::load(&path).map_err(run_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Routes every endpoint to a builtin mock or a TOML mock script.
    fn apply_mock(&mut self, script: &str) {
        self.inner.apply_mock(script);
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(run_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.name()
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.mode = Mode::parse(mode).ok_or_else(|| value_err(format!("unknown mode {mode:?}")))?;
        Ok(())
    }

    #[getter]
    fn iterations_per_seed(&self) -> u32 {
        self.inner.iterations_per_seed
    }

    #[setter]
    fn set_iterations_per_seed(&mut self, n: u32) {
        self.inner.iterations_per_seed = n;
    }

    #[getter]
    fn repeat_count(&self) -> u32 {
        self.inner.repeat_count
    }

    #[setter]
    fn set_repeat_count(&mut self, n: u32) {
        self.inner.repeat_count = n;
    }

    #[getter]
    fn random_seed(&self) -> u64 {
        self.inner.random_seed
    }

    #[setter]
    fn set_random_seed(&mut self, s: u64) {
        self.inner.random_seed = s;
    }

    fn chain_count(&self) -> usize {
        self.inner.chain_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(mode={:?}, iterations_per_seed={}, repeat_count={})",
            self.inner.mode.name(),
            self.inner.iterations_per_seed,
            self.inner.repeat_count
        )
    }
}

#[pyclass(name = "RunLedger", module = "t2ijudge_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyRunLedger {
    inner: RunLedger,
}

#[pymethods]
impl PyRunLedger {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunLedger { inner: runner::read_ledger(&path).map_err(run_err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyRunLedger { inner: runner::parse_ledger(text).map_err(run_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        runner::write_ledger(&self.inner, &path).map_err(run_err)
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    /// JSONL with timestamps cleared, for replay comparisons.
    fn replay_key(&self) -> String {
        self.inner.without_timestamps().to_jsonl()
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.model.clone()
    }

    #[getter]
    fn repeat(&self) -> u32 {
        self.inner.repeat
    }

    fn record_count(&self) -> usize {
        self.inner.record_count()
    }

    fn error_count(&self) -> usize {
        self.inner.error_count()
    }

    /// Chains as dicts: records, errors and final score.
    fn chains(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.chains)
    }

    fn __len__(&self) -> usize {
        self.inner.record_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunLedger(model={:?}, repeat={}, records={}, errors={})",
            self.inner.model,
            self.inner.repeat,
            self.inner.record_count(),
            self.inner.error_count()
        )
    }
}

/// Every (model, repeat) ledger of a configuration. The GIL is released
/// while chains run.
#[pyfunction]
fn run(py: Python<'_>, config: &PyRunConfig) -> PyResult<Vec<PyRunLedger>> {
    let c = config.inner.clone();
    let ledgers = py
        .detach(move || {
            let gw = Gateways::connect(&c)?;
            runner::run_all(&c, &gw)
        })
        .map_err(run_err)?;
    Ok(ledgers.into_iter().map(|inner| PyRunLedger { inner }).collect())
}

/// Aggregate report over ledgers. `reference` maps model ids to reference
/// scores (higher is better).
#[pyfunction]
#[pyo3(signature = (ledgers, reference = None))]
fn report(py: Python<'_>, ledgers: Vec<PyRunLedger>, reference: Option<BTreeMap<String, f64>>) -> PyResult<Py<PyAny>> {
    let ls: Vec<RunLedger> = ledgers.into_iter().map(|l| l.inner).collect();
    let reference = reference.map(|m| RankVector::new(m.into_iter().collect())).transpose().map_err(value_err)?;
    let r = runner::report(&ls, reference.as_ref()).map_err(run_err)?;
    to_py(py, &r)
}

#[pymodule]
fn t2ijudge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kendall_tau_b, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(sentence_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(count_syllables, m)?)?;
    m.add_function(wrap_pyfunction!(flesch_kincaid, m)?)?;
    m.add_function(wrap_pyfunction!(yngve_score, m)?)?;
    m.add_function(wrap_pyfunction!(difficulty_profile, m)?)?;
    m.add_function(wrap_pyfunction!(select_bin, m)?)?;
    m.add_function(wrap_pyfunction!(parse_prompt_reply, m)?)?;
    m.add_function(wrap_pyfunction!(parse_mcq_block, m)?)?;
    m.add_function(wrap_pyfunction!(yes_probability, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_mean, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyRunLedger>()?;
    Ok(())
}
