//! Frequency-based spelling correction over edit-distance candidates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{TextError, TokenSeq};

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpellModel {
    freq: BTreeMap<String, u64>,
    total: u64,
}

impl SpellModel {
    pub fn count(&self, word: &str) -> u64 {
        self.freq.get(word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.freq.contains_key(word)
    }
}

pub fn build_spell_model<'a, I>(corpus: I) -> Result<SpellModel, TextError>
where
    I: IntoIterator<Item = &'a TokenSeq>,
{
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0;
    for seq in corpus {
        for tok in seq.iter() {
            *freq.entry(tok.clone()).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(TextError::EmptyCorpus);
    }
    Ok(SpellModel { freq, total })
}

/// All strings one delete, transpose, replace or insert away from `word`.
pub fn edits1(word: &str) -> BTreeSet<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let mut out = BTreeSet::new();
    let join = |parts: &[&[char]]| parts.iter().flat_map(|p| p.iter()).collect::<String>();
    for i in 0..=n {
        let (left, right) = chars.split_at(i);
        if !right.is_empty() {
            out.insert(join(&[left, &right[1..]]));
        }
        if right.len() > 1 {
            out.insert(join(&[left, &[right[1], right[0]], &right[2..]]));
        }
        for &c in LETTERS {
            let c = c as char;
            if !right.is_empty() {
                out.insert(join(&[left, &[c], &right[1..]]));
            }
            out.insert(join(&[left, &[c], right]));
        }
    }
    out
}

fn best_known<'a>(model: &SpellModel, candidates: impl Iterator<Item = &'a String>) -> Option<String> {
    let mut best: Option<(&String, u64)> = None;
    for cand in candidates {
        let c = model.count(cand);
        if c == 0 {
            continue;
        }
        best = match best {
            Some((w, bc)) if bc > c || (bc == c && w <= cand) => Some((w, bc)),
            _ => Some((cand, c)),
        };
    }
    best.map(|(w, _)| w.clone())
}

/// Known word, else most frequent known edit at distance 1, else at
/// distance 2, else the input. Frequency ties go to the lexicographically
/// smallest candidate.
pub fn spell_correct(word: &str, model: &SpellModel) -> String {
    if model.contains(word) {
        return word.to_owned();
    }
    let e1 = edits1(word);
    if let Some(w) = best_known(model, e1.iter()) {
        return w;
    }
    let mut best: Option<(String, u64)> = None;
    for w1 in &e1 {
        if let Some(w) = best_known(model, edits1(w1).iter()) {
            let c = model.count(&w);
            best = match best {
                Some((bw, bc)) if bc > c || (bc == c && bw <= w) => Some((bw, bc)),
                _ => Some((w, c)),
            };
        }
    }
    best.map(|(w, _)| w).unwrap_or_else(|| word.to_owned())
}
