//! Python bindings: `import hofmtl`.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use hofmtl_core::checkpoint::{load_checkpoint, save_checkpoint};
use hofmtl_core::corpus::{synth_fixture, SynthSpec};
use hofmtl_core::metrics::{self, ConfusionMatrix};
use hofmtl_core::model::MtlModel;
use hofmtl_core::normalize::{Normalizer, NormalizerConfig};
use hofmtl_core::tokenizer::{self, DEFAULT_MAX_LEN};
use hofmtl_core::{cli, trainer, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.category());
    match e {
        Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn normalizer(lexicon: Option<Vec<String>>) -> PyResult<Normalizer> {
    let mut config = NormalizerConfig::default();
    config.segmentation_lexicon = lexicon.map(|words| words.into_iter().map(|w| w.to_lowercase()).collect());
    Normalizer::new(config).map_err(py_err)
}

/// Normalizes a tweet: entity placeholders, hashtag splitting, emoji aliases.
#[pyfunction]
#[pyo3(signature = (text, lexicon=None))]
fn normalize(text: &str, lexicon: Option<Vec<String>>) -> PyResult<String> {
    Ok(normalizer(lexicon)?.normalize(text))
}

#[pyfunction]
#[pyo3(signature = (body, lexicon=None))]
fn segment_hashtag(body: &str, lexicon: Option<Vec<String>>) -> Vec<String> {
    let lex: Option<HashSet<String>> = lexicon.map(|w| w.into_iter().collect());
    hofmtl_core::normalize::segment_hashtag(body, lex.as_ref())
}

#[pyclass(frozen)]
struct Vocab {
    inner: tokenizer::Vocab,
}

#[pymethods]
impl Vocab {
    /// Learns a WordPiece vocabulary from already-normalized lines.
    #[staticmethod]
    fn build(corpus: Vec<String>, size: usize) -> PyResult<Self> {
        let reserved = NormalizerConfig::default().atomic_tokens();
        let inner = tokenizer::build_vocab(&corpus, size, &reserved).map_err(py_err)?;
        Ok(Vocab { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Vocab {
            inner: tokenizer::Vocab::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    /// Returns `(ids, mask)` padded to `max_len`.
    #[pyo3(signature = (text, max_len=DEFAULT_MAX_LEN))]
    fn encode(&self, text: &str, max_len: usize) -> PyResult<(Vec<u32>, Vec<u32>)> {
        let e = tokenizer::encode(text, &self.inner, max_len).map_err(py_err)?;
        Ok((e.ids, e.mask.into_iter().map(u32::from).collect()))
    }

    fn decode(&self, ids: Vec<u32>) -> String {
        tokenizer::decode(&ids, &self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(frozen)]
struct Model {
    inner: MtlModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    fn task_names(&self) -> Vec<String> {
        self.inner.task_names().into_iter().map(String::from).collect()
    }

    fn labels(&self, task: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.task(task).map_err(py_err)?.spec.labels.clone())
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// One `(task, label, probabilities)` triple per task head.
    #[pyo3(signature = (text, lexicon=None))]
    fn predict(&self, text: &str, lexicon: Option<Vec<String>>) -> PyResult<Vec<(String, String, Vec<f64>)>> {
        let preds = self.inner.predict_all(text, &normalizer(lexicon)?).map_err(py_err)?;
        Ok(preds.into_iter().map(|p| (p.task, p.label, p.probabilities)).collect())
    }
}

/// Confusion counts, rows gold and columns predicted.
#[pyfunction]
fn confusion(gold: Vec<usize>, pred: Vec<usize>, k: usize) -> PyResult<Vec<Vec<u64>>> {
    Ok(metrics::confusion_k(&gold, &pred, k).map_err(py_err)?.counts)
}

/// Per-class and macro precision/recall/F1 as a dict.
#[pyfunction]
#[pyo3(signature = (gold, pred, labels, task="hof"))]
fn report<'py>(
    py: Python<'py>,
    gold: Vec<usize>,
    pred: Vec<usize>,
    labels: Vec<String>,
    task: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cm: ConfusionMatrix = metrics::confusion(&gold, &pred, &labels).map_err(py_err)?;
    let r = metrics::report(&cm, task);
    let scores = |s: &metrics::Scores| -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("precision", s.precision)?;
        d.set_item("recall", s.recall)?;
        d.set_item("f1", s.f1)?;
        Ok(d)
    };
    let out = PyDict::new(py);
    out.set_item("task", &r.task)?;
    out.set_item("n", r.n)?;
    out.set_item("accuracy", r.accuracy)?;
    out.set_item("macro", scores(&r.macro_avg)?)?;
    let per_class = PyDict::new(py);
    for c in &r.per_class {
        let d = scores(&c.scores)?;
        d.set_item("support", c.support)?;
        per_class.set_item(&c.label, d)?;
    }
    out.set_item("per_class", per_class)?;
    Ok(out)
}

/// Seeded interleaving of `(task, batch_index)` pairs for one epoch.
#[pyfunction]
fn plan_epoch(sizes: Vec<(String, usize)>, batch_size: usize, seed: u64) -> PyResult<Vec<(String, usize)>> {
    trainer::plan_epoch(&sizes, batch_size, seed).map_err(py_err)
}

/// Synthetic corpus: `{task: [(id, text, label), ...]}`.
#[pyfunction]
fn synth(sizes: BTreeMap<String, usize>, rho: f64, seed: u64) -> PyResult<BTreeMap<String, Vec<(String, String, String)>>> {
    let pairs: Vec<(&str, usize)> = sizes.iter().map(|(t, n)| (t.as_str(), *n)).collect();
    let data = synth_fixture(&SynthSpec::new(&pairs, rho), seed).map_err(py_err)?;
    Ok(data
        .into_iter()
        .map(|(task, d)| {
            let rows = d
                .examples
                .iter()
                .map(|e| (e.id.clone(), e.text.clone(), d.labels[e.label].clone()))
                .collect();
            (task, rows)
        })
        .collect())
}

/// Runs the `hofmtl` command line in-process; returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("hofmtl".to_string()).chain(args);
    let code = cli::dispatch(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[pymodule]
fn hofmtl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", cli::VERSION)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(segment_hashtag, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(plan_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Vocab>()?;
    m.add_class::<Model>()?;
    Ok(())
}
