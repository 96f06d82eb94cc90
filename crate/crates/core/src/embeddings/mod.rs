//! Word vectors: skip-gram training, GloVe loading, document averaging,
//! sequence embedding and a bag-of-words baseline.

mod bow;
mod glove;
mod word2vec;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::textproc::TokenSeq;

pub use bow::{bow_vectorize, BowVocabulary};
pub use glove::{load_glove, parse_glove};
pub use word2vec::{train_word2vec, train_word2vec_with_report, Word2VecConfig, Word2VecReport};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("vocabulary is empty after min_count filtering")]
    EmptyVocabulary,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: expected {expected} values, found {found}")]
    InconsistentDimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("vector matrix has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Word2Vec,
    Glove,
}

impl EmbeddingSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmbeddingSource::Word2Vec => "word2vec",
            EmbeddingSource::Glove => "glove",
        }
    }
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EmbeddingSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "word2vec" | "w2v" => Ok(Self::Word2Vec),
            "glove" => Ok(Self::Glove),
            other => Err(format!("unknown embedding source `{other}`")),
        }
    }
}

/// Word to dense vector lookup. Rows are stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    source: EmbeddingSource,
}

impl EmbeddingTable {
    /// Builds a table from parallel `words` and row-major `vectors`.
    /// Later duplicates of a word are ignored.
    pub fn new(
        dim: usize,
        words: Vec<String>,
        vectors: Vec<f64>,
        source: EmbeddingSource,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::InvalidConfig("dim must be at least 1".into()));
        }
        if vectors.len() != words.len() * dim {
            return Err(EmbeddingError::ShapeMismatch {
                expected: words.len() * dim,
                got: vectors.len(),
            });
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::ParseError {
                line: pos / dim + 1,
                message: "non-finite vector component".into(),
            });
        }
        let mut index = HashMap::with_capacity(words.len());
        let mut kept_words = Vec::with_capacity(words.len());
        let mut kept = Vec::with_capacity(vectors.len());
        for (i, w) in words.into_iter().enumerate() {
            if index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), kept_words.len());
            kept_words.push(w);
            kept.extend_from_slice(&vectors[i * dim..(i + 1) * dim]);
        }
        Ok(Self {
            dim,
            words: kept_words,
            index,
            vectors: kept,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.row(i))
    }

    /// word2vec text format: `|V| dim` header, then `word v1 .. vd` lines,
    /// nine significant digits per component.
    pub fn to_word2vec_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.len(), self.dim);
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.row(i) {
                let _ = write!(out, " {v:.8e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_word2vec_text<R: BufRead>(reader: R, source: EmbeddingSource) -> Result<Self, EmbeddingError> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or(EmbeddingError::EmptyCorpus)??;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize, EmbeddingError> {
            s.and_then(|x| x.parse().ok()).ok_or_else(|| EmbeddingError::ParseError {
                line: 1,
                message: "header must be `<vocab size> <dim>`".into(),
            })
        };
        let n = parse_usize(parts.next())?;
        let dim = parse_usize(parts.next())?;
        let mut words = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = k + 2;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let word = fields.next().unwrap_or_default().to_owned();
            let values: Vec<&str> = fields.collect();
            if values.len() != dim {
                return Err(EmbeddingError::InconsistentDimension {
                    line: lineno,
                    expected: dim,
                    found: values.len(),
                });
            }
            for v in values {
                vectors.push(v.parse::<f64>().map_err(|e| EmbeddingError::ParseError {
                    line: lineno,
                    message: e.to_string(),
                })?);
            }
            words.push(word);
        }
        if words.len() != n {
            return Err(EmbeddingError::ParseError {
                line: 1,
                message: format!("header declares {n} words, found {}", words.len()),
            });
        }
        Self::new(dim, words, vectors, source)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean vector of the in-vocabulary tokens plus the in-vocabulary fraction.
/// No known token gives the zero vector and coverage 0.
pub fn embed_average(seq: &TokenSeq, table: &EmbeddingTable) -> (Vec<f64>, f64) {
    let mut sum = vec![0.0; table.dim()];
    let mut hits = 0usize;
    for tok in seq.iter() {
        if let Some(v) = table.get(tok) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return (sum, 0.0);
    }
    let inv = hits as f64;
    for s in &mut sum {
        *s /= inv;
    }
    (sum, hits as f64 / seq.len() as f64)
}

/// In-vocabulary token vectors in order, truncated to `max_len` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEmbedding {
    pub dim: usize,
    pub len: usize,
    /// `len * dim` values, row-major.
    pub data: Vec<f64>,
}

impl SequenceEmbedding {
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn embed_sequence(seq: &TokenSeq, table: &EmbeddingTable, max_len: usize) -> SequenceEmbedding {
    let max_len = max_len.max(1);
    let mut data = Vec::new();
    let mut len = 0;
    for tok in seq.iter() {
        if len == max_len {
            break;
        }
        if let Some(v) = table.get(tok) {
            data.extend_from_slice(v);
            len += 1;
        }
    }
    SequenceEmbedding {
        dim: table.dim(),
        len,
        data,
    }
}

/// Up to `k` other words by descending cosine similarity; ties by word.
pub fn nearest_neighbors(table: &EmbeddingTable, word: &str, k: usize) -> Result<Vec<(String, f64)>, EmbeddingError> {
    let q = table
        .get(word)
        .ok_or_else(|| EmbeddingError::UnknownWord(word.to_owned()))?;
    let mut scored: Vec<(String, f64)> = table
        .words()
        .iter()
        .enumerate()
        .filter(|(_, w)| w.as_str() != word)
        .map(|(i, w)| (w.clone(), cosine(q, table.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k.max(1));
    Ok(scored)
}
