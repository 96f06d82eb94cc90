//! Skip-gram with negative sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingSource, EmbeddingTable};
use crate::textproc::TokenSeq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_count: u64,
    pub seed: u64,
    /// Frequent-word subsampling threshold; `None` keeps every token.
    pub subsample: Option<f64>,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_count: 2,
            seed: 1,
            subsample: None,
        }
    }
}

impl Word2VecConfig {
    fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::InvalidConfig(m.into()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        Ok(())
    }
}

/// Mean sampled objective per positive pair, one entry per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Word2VecReport {
    pub epoch_loss: Vec<f64>,
}

pub fn train_word2vec(corpus: &[TokenSeq], config: &Word2VecConfig) -> Result<EmbeddingTable, EmbeddingError> {
    train_word2vec_with_report(corpus, config).map(|(t, _)| t)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn train_word2vec_with_report(
    corpus: &[TokenSeq],
    config: &Word2VecConfig,
) -> Result<(EmbeddingTable, Word2VecReport), EmbeddingError> {
    config.validate()?;
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(EmbeddingError::EmptyCorpus);
    }

    let mut counts: HashMap<&str, u64> = HashMap::new();
    for seq in corpus {
        for tok in seq.iter() {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyVocabulary);
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();

    let encoded: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
        .collect();
    let total_words: u64 = vocab.iter().map(|v| v.1).sum();

    // unigram^0.75 cumulative distribution for negatives
    let mut cumulative = Vec::with_capacity(vocab.len());
    let mut acc = 0.0;
    for &(_, c) in &vocab {
        acc += (c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let sample_negative = |rng: &mut ChaCha8Rng| -> usize {
        let u = rng.gen::<f64>() * acc;
        cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
    };

    let dim = config.dim;
    let n = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..n * dim).map(|_| (rng.gen::<f64>() - 0.5) / dim as f64).collect();
    let mut output = vec![0.0; n * dim];
    let mut grad_in = vec![0.0; dim];

    let keep_prob: Option<Vec<f64>> = config.subsample.map(|t| {
        vocab
            .iter()
            .map(|&(_, c)| {
                let f = c as f64 / total_words as f64;
                ((t / f).sqrt() + t / f).min(1.0)
            })
            .collect()
    });

    let planned = (config.epochs as f64) * total_words as f64 + 1.0;
    let mut processed = 0u64;
    let mut report = Word2VecReport::default();
    let mut sentence = Vec::new();

    for _epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for seq in &encoded {
            sentence.clear();
            for &w in seq {
                let keep = match &keep_prob {
                    Some(p) => rng.gen::<f64>() < p[w],
                    None => true,
                };
                if keep {
                    sentence.push(w);
                }
            }
            for pos in 0..sentence.len() {
                let lr = config.initial_lr * (1.0 - processed as f64 / planned).max(1e-4);
                processed += 1;
                let center = sentence[pos];
                let shrink = rng.gen_range(0..config.window);
                let reach = config.window - shrink;
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = sentence[ctx_pos];
                    let v = center * dim;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = sample_negative(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = target * dim;
                        let dot: f64 = (0..dim).map(|d| input[v + d] * output[u + d]).sum();
                        let p = sigmoid(dot);
                        loss_sum -= if label == 1.0 {
                            p.max(1e-12).ln()
                        } else {
                            (1.0 - p).max(1e-12).ln()
                        };
                        let g = lr * (label - p);
                        for d in 0..dim {
                            grad_in[d] += g * output[u + d];
                            output[u + d] += g * input[v + d];
                        }
                    }
                    for d in 0..dim {
                        input[v + d] += grad_in[d];
                    }
                    pairs += 1;
                }
            }
        }
        report.epoch_loss.push(if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 });
    }

    let words = vocab.iter().map(|(w, _)| (*w).to_owned()).collect();
    let table = EmbeddingTable::new(dim, words, input, EmbeddingSource::Word2Vec)?;
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn corpus() -> Vec<TokenSeq> {
        [
            "the quick brown fox jumps over the lazy dog",
            "the lazy dog sleeps in the sun",
            "a quick brown cat jumps over a sleeping dog",
            "brown foxes and brown cats are quick",
            "dogs and cats sleep in the warm sun",
            "the fox runs over the hill",
            "the cat runs over the wall",
            "a lazy fox sleeps all day",
            "the quick dog jumps high",
            "the warm sun shines over the hill",
        ]
        .iter()
        .map(|s| tokenize(s))
        .collect()
    }

    #[test]
    fn shape_and_finiteness() {
        let cfg = Word2VecConfig { dim: 50, seed: 7, ..Default::default() };
        let t = train_word2vec(&corpus(), &cfg).unwrap();
        assert_eq!(t.dim(), 50);
        assert!(t.len() > 5);
        assert!(t.vectors().iter().all(|v| v.is_finite()));
        assert_eq!(t.vectors().len(), t.len() * 50);
    }

    #[test]
    fn bit_identical_per_seed() {
        let cfg = Word2VecConfig { dim: 20, seed: 3, ..Default::default() };
        let a = train_word2vec(&corpus(), &cfg).unwrap();
        let b = train_word2vec(&corpus(), &cfg).unwrap();
        assert_eq!(a.words(), b.words());
        let bits = |t: &EmbeddingTable| t.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn min_count_respected() {
        let cfg = Word2VecConfig { dim: 8, min_count: 3, ..Default::default() };
        let t = train_word2vec(&corpus(), &cfg).unwrap();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in corpus() {
            for w in s.iter() {
                *counts.entry(w.clone()).or_default() += 1;
            }
        }
        for w in t.words() {
            assert!(counts[w] >= 3, "{w}");
        }
        for (w, c) in counts {
            assert_eq!(t.get(&w).is_some(), c >= 3);
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = Word2VecConfig { min_count: 100, ..Default::default() };
        assert!(matches!(train_word2vec(&corpus(), &cfg), Err(EmbeddingError::EmptyVocabulary)));
        assert!(matches!(
            train_word2vec(&[TokenSeq::default()], &Word2VecConfig::default()),
            Err(EmbeddingError::EmptyCorpus)
        ));
        let bad = Word2VecConfig { window: 0, ..Default::default() };
        assert!(matches!(train_word2vec(&corpus(), &bad), Err(EmbeddingError::InvalidConfig(_))));
    }

    #[test]
    fn subsampling_flag_runs() {
        let cfg = Word2VecConfig { dim: 8, subsample: Some(1e-3), ..Default::default() };
        assert!(train_word2vec(&corpus(), &cfg).is_ok());
    }
}
