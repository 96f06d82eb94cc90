//! Generated essay corpora whose gold score is a known function of the
//! text, for end-to-end checks without the real dataset.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EssayRecord, ScoreScale};

pub const KEYWORDS: [&str; 10] = [
    "photosynthesis",
    "chlorophyll",
    "sunlight",
    "glucose",
    "oxygen",
    "carbon",
    "energy",
    "leaf",
    "water",
    "roots",
];

pub const FILLERS: [&str; 40] = [
    "table", "window", "garden", "yellow", "purple", "market", "bicycle", "pencil", "river", "mountain", "kitchen",
    "blanket", "guitar", "ticket", "holiday", "village", "castle", "violin", "carpet", "teacher", "uncle",
    "neighbor", "cookie", "bottle", "jacket", "camera", "ladder", "basket", "pillow", "candle", "wallet", "mirror",
    "hammer", "button", "rocket", "puzzle", "parrot", "tunnel", "cabbage", "lantern",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_essays: usize,
    pub essay_set: u32,
    /// Tokens per essay.
    pub length: usize,
    /// Keyword count is drawn uniformly from `0..=max_keywords`.
    pub max_keywords: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_essays: 1000,
            essay_set: 1,
            length: 60,
            max_keywords: 23,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn scale(&self) -> ScoreScale {
        ScoreScale::new(self.essay_set, 1, 4)
    }

    /// Score 1..=4 from the keyword count, in four equal-width buckets.
    pub fn score_for(&self, keywords: usize) -> i32 {
        let width = (self.max_keywords + 1).div_ceil(4);
        1 + (keywords / width).min(3) as i32
    }
}

pub fn keyword_count(text: &str) -> usize {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| KEYWORDS.contains(&w.to_lowercase().as_str()))
        .count()
}

pub fn generate(spec: &SyntheticSpec) -> Vec<EssayRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_essays)
        .map(|i| {
            let k = rng.gen_range(0..=spec.max_keywords.min(spec.length));
            let mut words: Vec<&str> = (0..spec.length)
                .map(|j| {
                    if j < k {
                        *KEYWORDS.choose(&mut rng).expect("non-empty")
                    } else {
                        *FILLERS.choose(&mut rng).expect("non-empty")
                    }
                })
                .collect();
            words.shuffle(&mut rng);
            let mut text = words.join(" ");
            text.push('.');
            EssayRecord {
                essay_id: i as u64 + 1,
                essay_set: spec.essay_set,
                text,
                human_score: spec.score_for(k),
            }
        })
        .collect()
}

/// A text of `n_words` drawn from the synthetic vocabulary.
pub fn random_answer(n_words: usize, rng: &mut impl Rng) -> String {
    (0..n_words)
        .map(|_| {
            if rng.gen_bool(0.2) {
                *KEYWORDS.choose(rng).expect("non-empty")
            } else {
                *FILLERS.choose(rng).expect("non-empty")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
