use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;
use trex::data::{self, CategoryVocab, CustomerHistory, Session};
use trex::evalkit::{self, EvalConfig, GenerationMode, PTop, Predictor, RankedBasket};
use trex::model::{Model, ModelConfig};
use trex::trainer::{self, TrainConfig};

fn err(e: trex::Error) -> PyErr {
    match e {
        trex::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_json(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn sessions(raw: Vec<(i64, Vec<usize>)>) -> PyResult<Vec<Session>> {
    raw.into_iter()
        .map(|(day, cats)| Session::new(day, cats).map_err(err))
        .collect()
}

fn basket(items: &RankedBasket) -> Vec<(usize, f64)> {
    items.items().to_vec()
}

/// Predicted ids in rank order, with placeholder descending scores.
fn ranked(ids: Vec<usize>) -> PyResult<RankedBasket> {
    let n = ids.len();
    RankedBasket::new(ids.into_iter().enumerate().map(|(i, c)| (c, (n - i) as f64)).collect()).map_err(err)
}

#[pyclass(name = "Dataset", module = "trex_py")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(data: PathBuf, vocab: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_dataset(&data, &vocab).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (customers, seed=0, categories=35, archetype=None, min_sessions=6, max_sessions=20))]
    fn synthetic(
        customers: usize,
        seed: u64,
        categories: usize,
        archetype: Option<&str>,
        min_sessions: usize,
        max_sessions: usize,
    ) -> PyResult<Self> {
        let mut cfg = data::SyntheticConfig {
            customers,
            categories,
            min_sessions,
            max_sessions,
            ..Default::default()
        };
        if let Some(a) = archetype {
            cfg.mix = a.parse().map_err(err)?;
        }
        Ok(Self {
            inner: data::generate_synthetic(&cfg, seed).map_err(err)?,
        })
    }

    fn save(&self, data: PathBuf, vocab: PathBuf) -> PyResult<()> {
        data::save_dataset(&self.inner, &data, &vocab).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.customers.len()
    }

    #[getter]
    fn num_sessions(&self) -> usize {
        self.inner.num_sessions()
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.inner.vocab.names().to_vec()
    }

    #[getter]
    fn customer_ids(&self) -> Vec<String> {
        self.inner.customers.iter().map(|c| c.customer_id.clone()).collect()
    }

    /// Sessions of customer `i` as `(day, [category id, ...])`.
    fn history(&self, i: usize) -> PyResult<Vec<(i64, Vec<usize>)>> {
        let c = self
            .inner
            .customers
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("customer index {i} out of range")))?;
        Ok(c.sessions().iter().map(|s| (s.day, s.categories().to_vec())).collect())
    }
}

#[pyclass(name = "Checkpoint", module = "trex_py")]
struct PyCheckpoint {
    inner: trainer::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: trainer::Checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.inner.vocab.names().to_vec()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.meta.epoch
    }

    #[getter]
    fn best_val_loss(&self) -> f64 {
        self.inner.meta.best_val_loss
    }

    /// Model configuration as a dict.
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.model).map_err(|e| PyValueError::new_err(e.to_string()))?;
        from_json(py, &text)
    }

    /// Ranked `(category name, score)` pairs for a history of
    /// `(day, [category name, ...])` sessions.
    #[pyo3(signature = (history, k, partial=None, mode="autoregressive"))]
    fn predict(
        &self,
        history: Vec<(i64, Vec<String>)>,
        k: usize,
        partial: Option<Vec<String>>,
        mode: &str,
    ) -> PyResult<Vec<(String, f64)>> {
        let vocab = &self.inner.vocab;
        let ids = |names: &[String]| names.iter().map(|n| vocab.id(n).map_err(err)).collect::<PyResult<Vec<_>>>();
        let raw = history
            .iter()
            .map(|(day, names)| Ok((*day, ids(names)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let h = CustomerHistory::new("query", sessions(raw)?);
        let prefix = ids(&partial.unwrap_or_default())?;
        let mode: GenerationMode = mode.parse().map_err(err)?;
        let p = Predictor::from_checkpoint(&self.inner, mode).map_err(err)?;
        let b = p.generate(&h, k, &prefix).map_err(err)?;
        Ok(b.items().iter().map(|&(c, s)| (vocab.name(c).to_string(), s)).collect())
    }
}

fn split(ds: &data::Dataset, eligible_sessions: usize, val_frac: f64, seed: u64) -> PyResult<data::SplitDataset> {
    data::holdout_split(&data::filter_eligible(ds, eligible_sessions), val_frac, seed).map_err(err)
}

/// Moves the keys of `overrides` that exist in `base` into it.
fn overlay(base: &mut Value, overrides: &mut serde_json::Map<String, Value>) {
    if let Value::Object(b) = base {
        let keys: Vec<String> = overrides.keys().filter(|k| b.contains_key(*k)).cloned().collect();
        for k in keys {
            b.insert(k.clone(), overrides.remove(&k).unwrap());
        }
    }
}

/// Trains from a flat dict of model and training settings. Returns the best
/// checkpoint and the per-epoch log.
#[pyfunction]
#[pyo3(signature = (dataset, config=None, out=None))]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: Option<&Bound<'py, PyDict>>,
    out: Option<PathBuf>,
) -> PyResult<(PyCheckpoint, Bound<'py, PyAny>)> {
    let mut rest = match config {
        Some(c) => match to_json(c.as_any())? {
            Value::Object(m) => m,
            _ => unreachable!(),
        },
        None => Default::default(),
    };
    let json_err = |e: serde_json::Error| PyValueError::new_err(e.to_string());
    let mut model = serde_json::to_value(ModelConfig {
        vocab_size: dataset.inner.vocab.size(),
        ..ModelConfig::default()
    })
    .map_err(json_err)?;
    let mut tc = serde_json::to_value(TrainConfig::default()).map_err(json_err)?;
    let mut split_cfg = serde_json::json!({"val_frac": 0.1, "eligible_sessions": 3});
    overlay(&mut model, &mut rest);
    overlay(&mut tc, &mut rest);
    overlay(&mut split_cfg, &mut rest);
    if let Some(k) = rest.keys().next() {
        return Err(PyValueError::new_err(format!("unknown config key {k:?}")));
    }
    let model: ModelConfig = serde_json::from_value(model).map_err(json_err)?;
    let tc: TrainConfig = serde_json::from_value(tc).map_err(json_err)?;
    let val_frac = split_cfg["val_frac"].as_f64().unwrap_or(0.1);
    let eligible = split_cfg["eligible_sessions"].as_u64().unwrap_or(3) as usize;

    let sp = split(&dataset.inner, eligible, val_frac, tc.seed)?;
    let model = Model::new(model).map_err(err)?;
    let outcome = py
        .detach(|| trainer::train(&model, &tc, &sp, out.as_deref(), |_| {}))
        .map_err(err)?;
    let log = serde_json::to_string(&outcome.log).map_err(json_err)?;
    Ok((
        PyCheckpoint {
            inner: outcome.checkpoint,
        },
        from_json(py, &log)?,
    ))
}

/// Evaluation report (as a dict) on every eligible customer's held-out
/// final basket. Without a checkpoint the top-frequency baseline is scored.
#[pyfunction]
#[pyo3(signature = (dataset, checkpoint=None, ks=None, rank_r=10, mode="autoregressive", eligible_sessions=3, val_frac=0.1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    checkpoint: Option<&PyCheckpoint>,
    ks: Option<Vec<usize>>,
    rank_r: usize,
    mode: &str,
    eligible_sessions: usize,
    val_frac: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let sp = split(&dataset.inner, eligible_sessions, val_frac, seed)?;
    let cfg = EvalConfig {
        ks: ks.unwrap_or_else(|| EvalConfig::default().ks),
        rank_r,
        threads: 0,
    };
    let report = match checkpoint {
        Some(c) => {
            trainer::check_vocab(&c.inner, &dataset.inner.vocab).map_err(err)?;
            let p = Predictor::from_checkpoint(&c.inner, mode.parse().map_err(err)?).map_err(err)?;
            py.detach(|| evalkit::evaluate(&p, &sp.test, &cfg))
        }
        None => {
            let p = PTop {
                num_categories: dataset.inner.vocab.num_categories(),
            };
            py.detach(|| evalkit::evaluate(&p, &sp.test, &cfg))
        }
    }
    .map_err(err)?;
    from_json(py, &report.to_json().map_err(err)?)
}

/// Top-`k` categories by purchase count (ties by id) as `(id, count)`.
#[pyfunction]
fn ptop(history: Vec<(i64, Vec<usize>)>, k: usize) -> PyResult<Vec<(usize, f64)>> {
    let h = CustomerHistory::new("query", sessions(history)?);
    Ok(basket(&evalkit::ptop(&h, k).map_err(err)?))
}

#[pyfunction]
fn recall_at_k(predicted: Vec<usize>, actual: Vec<usize>, k: usize) -> PyResult<f64> {
    evalkit::recall_at_k(&ranked(predicted)?, &actual, k).map_err(err)
}

#[pyfunction]
fn precision_at_k(predicted: Vec<usize>, actual: Vec<usize>, k: usize) -> PyResult<f64> {
    evalkit::precision_at_k(&ranked(predicted)?, &actual, k).map_err(err)
}

/// Category names of an `n`-category generated dataset.
#[pyfunction]
fn category_names(n: usize) -> PyResult<Vec<String>> {
    Ok(CategoryVocab::numbered(n).map_err(err)?.names().to_vec())
}

#[pymodule]
fn trex_py(_py: Python, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ptop, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(category_names, m)?)?;
    Ok(())
}
