//! Python module `essay_scoring`.

use essay_core::bundle::{bundle_from_bytes, bundle_to_bytes, load_bundle, save_bundle};
use essay_core::corpus::{EssayRecord, ScoreScale};
use essay_core::embeddings::Word2VecConfig;
use essay_core::metrics::qwk_scores;
use essay_core::pipeline::{train_bundle, EmbeddingChoice, PipelineConfig, ScoringBundle};
use essay_core::synthetic::{generate, SyntheticSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_python<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Quadratic weighted kappa between two integer rating lists on `[min_score, max_score]`.
#[pyfunction]
fn qwk(a: Vec<i32>, b: Vec<i32>, min_score: i32, max_score: i32) -> PyResult<f64> {
    qwk_scores(&a, &b, ScoreScale::new(0, min_score, max_score)).map_err(value_err)
}

/// Synthetic keyword-count corpus as `(essay_id, essay_set, text, score)` tuples.
#[pyfunction]
#[pyo3(signature = (n_essays=1000, essay_set=1, seed=7))]
fn synthetic_corpus(n_essays: usize, essay_set: u32, seed: u64) -> Vec<(u64, u32, String, i32)> {
    let spec = SyntheticSpec {
        n_essays,
        essay_set,
        seed,
        ..Default::default()
    };
    generate(&spec)
        .into_iter()
        .map(|r| (r.essay_id, r.essay_set, r.text, r.human_score))
        .collect()
}

/// A trained scoring bundle for one essay set.
#[pyclass(name = "Bundle", frozen)]
struct PyBundle {
    inner: ScoringBundle,
}

fn records(texts: Vec<String>, scores: Vec<i32>, essay_set: u32) -> PyResult<Vec<EssayRecord>> {
    if texts.len() != scores.len() {
        return Err(value_err(format!("{} texts but {} scores", texts.len(), scores.len())));
    }
    Ok(texts
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (text, human_score))| EssayRecord {
            essay_id: i as u64 + 1,
            essay_set,
            text,
            human_score,
        })
        .collect())
}

#[pymethods]
impl PyBundle {
    /// Trains word2vec embeddings and the four models. `config` is an
    /// optional pipeline configuration as a JSON string.
    #[staticmethod]
    #[pyo3(signature = (texts, scores, min_score, max_score, essay_set=1, dim=50, seed=1, config=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        texts: Vec<String>,
        scores: Vec<i32>,
        min_score: i32,
        max_score: i32,
        essay_set: u32,
        dim: usize,
        seed: u64,
        config: Option<&str>,
    ) -> PyResult<Self> {
        let base: PipelineConfig = match config {
            Some(json) => serde_json::from_str(json).map_err(value_err)?,
            None => PipelineConfig::default(),
        };
        let config = base.with_seed(seed);
        let recs = records(texts, scores, essay_set)?;
        let scale = ScoreScale::new(essay_set, min_score, max_score);
        let w2v = Word2VecConfig {
            dim,
            seed,
            ..Default::default()
        };
        let (inner, _) = py
            .detach(|| train_bundle(&recs, scale, EmbeddingChoice::Train(w2v), &config))
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_bundle(path).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        bundle_from_bytes(data).map(|inner| Self { inner }).map_err(value_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_bundle(&self.inner, path).map_err(value_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = bundle_to_bytes(&self.inner).map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn essay_set(&self) -> u32 {
        self.inner.essay_set
    }

    #[getter]
    fn scale(&self) -> (i32, i32) {
        (self.inner.scale.min_score, self.inner.scale.max_score)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Validation kappa per model, used as ensemble weights.
    #[getter]
    fn kappas<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.kappas)
    }

    /// Scores one answer: `{"score", "per_model", "raw", "coverage"}` plus
    /// `"warning"` when no token is known.
    fn score<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let out = py.detach(|| self.inner.score_text(text)).map_err(value_err)?;
        to_python(py, &out)
    }

    /// Per-model and combined kappa as `(model, qwk)` pairs.
    fn evaluate(&self, py: Python<'_>, texts: Vec<String>, scores: Vec<i32>) -> PyResult<Vec<(String, Option<f64>)>> {
        let recs = records(texts, scores, self.inner.essay_set)?;
        let report = py.detach(|| self.inner.evaluate(&recs)).map_err(value_err)?;
        Ok(report.rows.into_iter().map(|r| (r.model, r.qwk)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Bundle(essay_set={}, scale={}..={}, dim={})",
            self.inner.essay_set,
            self.inner.scale.min_score,
            self.inner.scale.max_score,
            self.inner.dim()
        )
    }
}

#[pymodule]
fn essay_scoring(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(qwk, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_class::<PyBundle>()?;
    Ok(())
}
