//! Kappa-weighted combination of the four model scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ScoreScale;
use crate::embeddings::EmbeddingSource;
use crate::metrics::{qwk_scores, MetricError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error("no model has a positive kappa")]
    NoPositiveWeights,
    #[error("score {0} outside the essay set's scale")]
    OutOfScale(i32),
    #[error("model `{0}` predictions do not match the gold scores")]
    ModelScaleMismatch(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Lstm,
    Dnn,
    Svm,
    Forest,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Lstm, ModelId::Dnn, ModelId::Svm, ModelId::Forest];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Lstm => "lstm",
            ModelId::Dnn => "dnn",
            ModelId::Svm => "svm",
            ModelId::Forest => "forest",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPrediction {
    pub model: ModelId,
    pub kappa: f64,
    pub score: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedPrediction {
    /// Weighted mean before rounding.
    pub raw: f64,
    pub final_score: i32,
    pub inputs: Vec<WeightedPrediction>,
}

/// Weighted mean of the scores of models with positive kappa, rounded half
/// away from zero and clamped to `scale`.
pub fn combine(inputs: &[WeightedPrediction], scale: &ScoreScale) -> Result<CombinedPrediction, EnsembleError> {
    if let Some(p) = inputs.iter().find(|p| !scale.contains(p.score)) {
        return Err(EnsembleError::OutOfScale(p.score));
    }
    let used: Vec<&WeightedPrediction> = inputs.iter().filter(|p| p.kappa > 0.0).collect();
    if used.is_empty() {
        return Err(EnsembleError::NoPositiveWeights);
    }
    let weight: f64 = used.iter().map(|p| p.kappa).sum();
    let num: f64 = used.iter().map(|p| p.kappa * p.score as f64).sum();
    let lo = used.iter().map(|p| p.score).min().unwrap_or(scale.min_score) as f64;
    let hi = used.iter().map(|p| p.score).max().unwrap_or(scale.max_score) as f64;
    // clamping absorbs the last-ulp drift of the division
    let raw = (num / weight).clamp(lo, hi);
    Ok(CombinedPrediction {
        raw,
        final_score: scale.clamp(raw.round() as i64),
        inputs: inputs.to_vec(),
    })
}

/// One line of a `model,embedding,dim,qwk` report; `qwk` is `None` for a
/// configuration that could not be run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub embedding: EmbeddingSource,
    pub dim: usize,
    pub qwk: Option<f64>,
}

pub const REPORT_HEADER: &str = "model,embedding,dim,qwk";

impl fmt::Display for ReportRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.qwk {
            Some(k) => write!(f, "{},{},{},{k:.4}", self.model, self.embedding, self.dim),
            None => write!(f, "{},{},{},skipped", self.model, self.embedding, self.dim),
        }
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

/// Test-set predictions of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPredictions {
    pub model: ModelId,
    pub kappa: f64,
    pub scores: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub combined: Vec<CombinedPrediction>,
}

impl EvaluationReport {
    pub fn qwk_of(&self, model: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.model == model).and_then(|r| r.qwk)
    }
}

/// Per-model and combined kappa against `gold`.
pub fn evaluate_combined(
    models: &[ModelPredictions],
    gold: &[i32],
    scale: &ScoreScale,
    embedding: EmbeddingSource,
    dim: usize,
) -> Result<EvaluationReport, EnsembleError> {
    for m in models {
        if m.scores.len() != gold.len() || m.scores.iter().any(|&s| !scale.contains(s)) {
            return Err(EnsembleError::ModelScaleMismatch(m.model.to_string()));
        }
    }
    let mut rows = Vec::new();
    for m in models {
        rows.push(ReportRow {
            model: m.model.to_string(),
            embedding,
            dim,
            qwk: Some(qwk_scores(gold, &m.scores, *scale)?),
        });
    }
    let combined = (0..gold.len())
        .map(|i| {
            let inputs: Vec<WeightedPrediction> = models
                .iter()
                .map(|m| WeightedPrediction {
                    model: m.model,
                    kappa: m.kappa,
                    score: m.scores[i],
                })
                .collect();
            combine(&inputs, scale)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let finals: Vec<i32> = combined.iter().map(|c| c.final_score).collect();
    rows.push(ReportRow {
        model: "combined".into(),
        embedding,
        dim,
        qwk: Some(qwk_scores(gold, &finals, *scale)?),
    });
    Ok(EvaluationReport { rows, combined })
}
