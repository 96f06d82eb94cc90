//! End-to-end training and scoring for one essay set: preprocessing,
//! embeddings, the four classifiers and their kappa-weighted combination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, EssayRecord, ScoreScale};
use crate::embeddings::{train_word2vec, Word2VecConfig};
use crate::embeddings::{embed_average, embed_sequence, EmbeddingError, EmbeddingSource, EmbeddingTable, SequenceEmbedding};
use crate::ensemble::{
    combine, evaluate_combined, CombinedPrediction, EnsembleError, EvaluationReport, ModelId, ModelPredictions,
    WeightedPrediction,
};
use crate::forest::{train_forest, Forest, ForestError, ForestParams};
use crate::metrics::{qwk_scores, MetricError};
use crate::neural::{
    carve_validation, train_dnn_split, train_lstm_split, DnnModel, LstmModel, NeuralError, TrainConfig, TrainReport,
};
use crate::svm::{train_ovr, SvmError, SvmMulti, SvmParams};
use crate::textproc::{build_spell_model, SpellModel};
use crate::textproc::{preprocess, tokenize, PreprocConfig, TextError, TokenSeq};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no training records for essay set {0}")]
    NoTrainingData(u32),
    #[error("record {essay_id} belongs to essay set {found}, expected {expected}")]
    SetMismatch { essay_id: u64, expected: u32, found: u32 },
    #[error("score {score} of record {essay_id} lies outside the scale {min}..={max}")]
    ScoreOutsideScale { essay_id: u64, score: i32, min: i32, max: i32 },
}

/// Per-dimension z-scoring fitted on training rows; zero-variance columns
/// are only centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], dim: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for k in 0..dim {
                let d = r[k] - mean[k];
                var[k] += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Where the word vectors come from.
#[derive(Debug, Clone)]
pub enum EmbeddingChoice {
    /// Train word2vec on the preprocessed training texts.
    Train(Word2VecConfig),
    /// Use a loaded table such as GloVe.
    Pretrained(EmbeddingTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preproc: PreprocConfig,
    /// Token cap for the LSTM input.
    pub max_seq_len: usize,
    /// Share of the training split held out to measure each model's kappa.
    pub validation_fraction: f64,
    pub seed: u64,
    pub dnn: TrainConfig,
    pub lstm: TrainConfig,
    pub svm: SvmParams,
    pub forest: ForestParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preproc: PreprocConfig::default(),
            max_seq_len: 300,
            validation_fraction: 0.1,
            seed: 1,
            dnn: TrainConfig::default(),
            lstm: TrainConfig::default(),
            svm: SvmParams::default(),
            forest: ForestParams::default(),
        }
    }
}

impl PipelineConfig {
    /// Uses `seed` for every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dnn.seed = seed;
        self.lstm.seed = seed;
        self.forest.seed = seed;
        self
    }
}

/// Everything needed to score answers for one essay set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringBundle {
    pub essay_set: u32,
    pub scale: ScoreScale,
    pub preproc: PreprocConfig,
    pub spell: Option<SpellModel>,
    pub max_seq_len: usize,
    pub table: EmbeddingTable,
    pub standardizer: Standardizer,
    pub dnn: DnnModel,
    pub lstm: LstmModel,
    pub svm: SvmMulti,
    pub forest: Forest,
    /// Validation kappa per model.
    pub kappas: BTreeMap<ModelId, f64>,
    /// Seed and ratio of the train/test split the bundle was fitted on.
    pub split_seed: u64,
    pub split_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub kappas: BTreeMap<ModelId, f64>,
    pub dnn_report: TrainReport,
    pub lstm_report: TrainReport,
    pub vocab_size: usize,
}

/// Features of one answer as seen by the models.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerFeatures {
    pub tokens: TokenSeq,
    /// Standardized mean word vector.
    pub average: Vec<f64>,
    pub sequence: SequenceEmbedding,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub score: i32,
    pub per_model: BTreeMap<ModelId, i32>,
    pub raw: f64,
    pub coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub const NO_COVERAGE_WARNING: &str = "no token of the answer is in the embedding vocabulary";

fn tokenize_corpus(
    records: &[EssayRecord],
    preproc: &PreprocConfig,
) -> Result<(Vec<TokenSeq>, Option<SpellModel>), PipelineError> {
    let spell = if preproc.spell_correct {
        let raw: Vec<TokenSeq> = records.iter().map(|r| tokenize(&r.text)).collect();
        Some(build_spell_model(raw.iter())?)
    } else {
        None
    };
    let seqs = records
        .iter()
        .map(|r| preprocess(&r.text, preproc, spell.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((seqs, spell))
}

fn features_for(
    tokens: TokenSeq,
    table: &EmbeddingTable,
    standardizer: &Standardizer,
    max_seq_len: usize,
) -> AnswerFeatures {
    let (avg, coverage) = embed_average(&tokens, table);
    let sequence = embed_sequence(&tokens, table, max_seq_len);
    AnswerFeatures {
        average: standardizer.transform(&avg),
        sequence,
        coverage,
        tokens,
    }
}

/// Fits all four models on `train` (records of one essay set).
pub fn train_bundle(
    train: &[EssayRecord],
    scale: ScoreScale,
    embedding: EmbeddingChoice,
    config: &PipelineConfig,
) -> Result<(ScoringBundle, TrainSummary), PipelineError> {
    scale.validate()?;
    if train.is_empty() {
        return Err(PipelineError::NoTrainingData(scale.set_id));
    }
    for r in train {
        if r.essay_set != scale.set_id {
            return Err(PipelineError::SetMismatch {
                essay_id: r.essay_id,
                expected: scale.set_id,
                found: r.essay_set,
            });
        }
        if !scale.contains(r.human_score) {
            return Err(PipelineError::ScoreOutsideScale {
                essay_id: r.essay_id,
                score: r.human_score,
                min: scale.min_score,
                max: scale.max_score,
            });
        }
    }

    let (seqs, spell) = tokenize_corpus(train, &config.preproc)?;
    let table = match embedding {
        EmbeddingChoice::Train(w2v) => train_word2vec(&seqs, &w2v)?,
        EmbeddingChoice::Pretrained(t) => t,
    };
    let raw_avg: Vec<Vec<f64>> = seqs.iter().map(|s| embed_average(s, &table).0).collect();
    let standardizer = Standardizer::fit(&raw_avg, table.dim());
    let x: Vec<Vec<f64>> = raw_avg.iter().map(|v| standardizer.transform(v)).collect();
    let sequences: Vec<SequenceEmbedding> = seqs
        .iter()
        .map(|s| embed_sequence(s, &table, config.max_seq_len))
        .collect();
    let y: Vec<i32> = train.iter().map(|r| r.human_score).collect();

    let split = carve_validation(y.len(), config.validation_fraction, config.seed)?;
    let sub_x: Vec<Vec<f64>> = split.train.iter().map(|&i| x[i].clone()).collect();
    let sub_y: Vec<i32> = split.train.iter().map(|&i| y[i]).collect();
    let val_x: Vec<&Vec<f64>> = split.val.iter().map(|&i| &x[i]).collect();
    let val_y: Vec<i32> = split.val.iter().map(|&i| y[i]).collect();

    let ((lstm, dnn), (svm, forest)) = rayon::join(
        || {
            rayon::join(
                || train_lstm_split(&sequences, &y, &scale, &config.lstm, &split),
                || train_dnn_split(&x, &y, &scale, &config.dnn, &split),
            )
        },
        || {
            rayon::join(
                || train_ovr(&sub_x, &sub_y, &config.svm),
                || train_forest(&sub_x, &sub_y, &config.forest),
            )
        },
    );
    let (lstm, lstm_report) = lstm?;
    let (dnn, dnn_report) = dnn?;
    let svm = svm?;
    let forest = forest?;

    let svm_val = val_x
        .iter()
        .map(|v| svm.predict(v).map(|p| p.class))
        .collect::<Result<Vec<_>, _>>()?;
    let forest_val = val_x
        .iter()
        .map(|v| forest.predict(v).map(|p| p.class))
        .collect::<Result<Vec<_>, _>>()?;
    let mut kappas = BTreeMap::new();
    kappas.insert(ModelId::Lstm, lstm.kappa);
    kappas.insert(ModelId::Dnn, dnn.kappa);
    kappas.insert(ModelId::Svm, qwk_scores(&val_y, &svm_val, scale)?);
    kappas.insert(ModelId::Forest, qwk_scores(&val_y, &forest_val, scale)?);

    let summary = TrainSummary {
        kappas: kappas.clone(),
        dnn_report,
        lstm_report,
        vocab_size: table.len(),
    };
    let bundle = ScoringBundle {
        essay_set: scale.set_id,
        scale,
        preproc: config.preproc.clone(),
        spell,
        max_seq_len: config.max_seq_len,
        table,
        standardizer,
        dnn,
        lstm,
        svm,
        forest,
        kappas,
        split_seed: 0,
        split_ratio: 0.0,
    };
    Ok((bundle, summary))
}

impl ScoringBundle {
    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn embedding_source(&self) -> EmbeddingSource {
        self.table.source()
    }

    pub fn features(&self, text: &str) -> Result<AnswerFeatures, PipelineError> {
        let tokens = preprocess(text, &self.preproc, self.spell.as_ref())?;
        Ok(features_for(tokens, &self.table, &self.standardizer, self.max_seq_len))
    }

    /// Individual model scores for prepared features.
    pub fn model_scores(&self, f: &AnswerFeatures) -> Result<BTreeMap<ModelId, i32>, PipelineError> {
        let mut out = BTreeMap::new();
        out.insert(ModelId::Lstm, self.lstm.predict(&f.sequence)?.class);
        out.insert(ModelId::Dnn, self.dnn.predict(&f.average)?.class);
        out.insert(ModelId::Svm, self.svm.predict(&f.average)?.class);
        out.insert(ModelId::Forest, self.forest.predict(&f.average)?.class);
        Ok(out)
    }

    pub fn combine_scores(&self, per_model: &BTreeMap<ModelId, i32>) -> Result<CombinedPrediction, PipelineError> {
        let inputs: Vec<WeightedPrediction> = per_model
            .iter()
            .map(|(&model, &score)| WeightedPrediction {
                model,
                kappa: self.kappas.get(&model).copied().unwrap_or(0.0),
                score,
            })
            .collect();
        Ok(combine(&inputs, &self.scale)?)
    }

    /// Scores one answer. An answer with no in-vocabulary token gets the
    /// lowest score from every model.
    pub fn score_text(&self, text: &str) -> Result<ScoreOutput, PipelineError> {
        let f = self.features(text)?;
        if f.coverage == 0.0 {
            let low = self.scale.min_score;
            return Ok(ScoreOutput {
                score: low,
                per_model: ModelId::ALL.iter().map(|&m| (m, low)).collect(),
                raw: low as f64,
                coverage: 0.0,
                warning: Some(NO_COVERAGE_WARNING.to_owned()),
            });
        }
        let per_model = self.model_scores(&f)?;
        let c = self.combine_scores(&per_model)?;
        Ok(ScoreOutput {
            score: c.final_score,
            per_model,
            raw: c.raw,
            coverage: f.coverage,
            warning: None,
        })
    }

    /// Per-model and combined test kappa on `records`.
    pub fn evaluate(&self, records: &[EssayRecord]) -> Result<EvaluationReport, PipelineError> {
        let gold: Vec<i32> = records.iter().map(|r| r.human_score).collect();
        let outputs = records
            .iter()
            .map(|r| self.score_text(&r.text))
            .collect::<Result<Vec<_>, _>>()?;
        let models: Vec<ModelPredictions> = ModelId::ALL
            .iter()
            .map(|&m| ModelPredictions {
                model: m,
                kappa: self.kappas.get(&m).copied().unwrap_or(0.0),
                scores: outputs.iter().map(|o| o.per_model[&m]).collect(),
            })
            .collect();
        Ok(evaluate_combined(&models, &gold, &self.scale, self.embedding_source(), self.dim())?)
    }
}
