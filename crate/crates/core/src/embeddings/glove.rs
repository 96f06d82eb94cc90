//! Pre-trained GloVe text vectors: `word v1 v2 ... vd` per line.

use std::io::BufRead;
use std::path::Path;

use super::{EmbeddingError, EmbeddingSource, EmbeddingTable};

pub fn load_glove(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingError> {
    let file = std::fs::File::open(path)?;
    parse_glove(std::io::BufReader::new(file))
}

/// The first non-blank line fixes the dimension. Duplicate words keep their
/// first vector.
pub fn parse_glove<R: BufRead>(reader: R) -> Result<EmbeddingTable, EmbeddingError> {
    let mut dim = None;
    let mut words = Vec::new();
    let mut vectors = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        let expected = *dim.get_or_insert(values.len());
        if expected == 0 {
            return Err(EmbeddingError::ParseError {
                line: lineno,
                message: "entry has no vector components".into(),
            });
        }
        if values.len() != expected {
            return Err(EmbeddingError::InconsistentDimension {
                line: lineno,
                expected,
                found: values.len(),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for v in values {
            let x: f64 = v.parse().map_err(|e: std::num::ParseFloatError| EmbeddingError::ParseError {
                line: lineno,
                message: format!("{v:?}: {e}"),
            })?;
            if !x.is_finite() {
                return Err(EmbeddingError::ParseError {
                    line: lineno,
                    message: format!("non-finite component {v:?}"),
                });
            }
            row.push(x);
        }
        if !seen.insert(word.to_owned()) {
            log::warn!("glove line {lineno}: duplicate word `{word}` ignored");
            continue;
        }
        words.push(word.to_owned());
        vectors.extend(row);
    }
    let dim = dim.ok_or(EmbeddingError::EmptyCorpus)?;
    EmbeddingTable::new(dim, words, vectors, EmbeddingSource::Glove)
}
