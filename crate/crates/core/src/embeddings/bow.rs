//! Bag-of-words count vectors.

use std::collections::HashMap;

use super::EmbeddingError;
use crate::textproc::TokenSeq;

/// Word to dense column index, in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BowVocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
}

impl BowVocabulary {
    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Counts of known words; unknown tokens are ignored.
    pub fn transform(&self, seq: &TokenSeq) -> Vec<u32> {
        let mut row = vec![0; self.size()];
        for tok in seq.iter() {
            if let Some(i) = self.index_of(tok) {
                row[i] += 1;
            }
        }
        row
    }
}

pub fn bow_vectorize(corpus: &[TokenSeq]) -> Result<(BowVocabulary, Vec<Vec<u32>>), EmbeddingError> {
    if corpus.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let mut vocab = BowVocabulary::default();
    for seq in corpus {
        for tok in seq.iter() {
            if !vocab.index.contains_key(tok) {
                vocab.index.insert(tok.clone(), vocab.words.len());
                vocab.words.push(tok.clone());
            }
        }
    }
    let rows = corpus.iter().map(|s| vocab.transform(s)).collect();
    Ok((vocab, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(words: &[&str]) -> TokenSeq {
        TokenSeq::from_tokens(words.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn counts() {
        let (v, rows) = bow_vectorize(&[seq(&["cat", "sat"]), seq(&["cat"]), seq(&[])]).unwrap();
        assert_eq!(v.index_of("cat"), Some(0));
        assert_eq!(v.index_of("sat"), Some(1));
        assert_eq!(rows, vec![vec![1, 1], vec![1, 0], vec![0, 0]]);
        assert_eq!(v.size(), 2);
        assert!(matches!(bow_vectorize(&[]), Err(EmbeddingError::EmptyCorpus)));
    }
}
