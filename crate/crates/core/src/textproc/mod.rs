//! Deterministic text preprocessing.
//!
//! Stage order is fixed: tokenize, spell correction, stopword removal,
//! stemming. Only stopword removal is enabled by default.

mod porter;
mod spell;

use std::collections::BTreeSet;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

pub use porter::porter_stem;
pub use spell::{build_spell_model, edits1, spell_correct, SpellModel};

const STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("spell model requires a non-empty corpus")]
    EmptyCorpus,
    #[error("spell correction is enabled but no spell model was supplied")]
    MissingSpellModel,
    #[error("i/o error reading stopword list: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercase tokens with no empty entries and no whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Wraps pre-split tokens, dropping empties.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Self(
            tokens
                .into_iter()
                .filter(|t| !t.is_empty() && !t.chars().any(char::is_whitespace))
                .collect(),
        )
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopwordList {
    words: BTreeSet<String>,
}

impl StopwordList {
    /// Parses one word per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, TextError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// The bundled 179-word English list.
    pub fn english() -> Self {
        Self::parse(STOPWORDS_EN)
    }

    pub fn empty() -> Self {
        Self {
            words: BTreeSet::new(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for StopwordList {
    fn default() -> Self {
        Self::english()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocConfig {
    pub remove_stopwords: bool,
    pub stem: bool,
    pub spell_correct: bool,
    pub stopword_list: StopwordList,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            remove_stopwords: true,
            stem: false,
            spell_correct: false,
            stopword_list: StopwordList::english(),
        }
    }
}

impl PreprocConfig {
    /// Tokenization only.
    pub fn raw() -> Self {
        Self {
            remove_stopwords: false,
            ..Self::default()
        }
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercased word tokens.
///
/// Tokens are runs of alphanumerics. An apostrophe survives only between
/// two alphanumerics, and a leading `@` is kept so anonymization tags like
/// `@PERSON1` stay whole.
pub fn tokenize(text: &str) -> TokenSeq {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() && cur != "@" {
            tokens.push(std::mem::take(cur));
        }
        cur.clear();
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
            && chars[i - 1].is_alphanumeric()
        {
            cur.push('\'');
        } else if c == '@' && cur.is_empty() && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()) {
            cur.push('@');
        } else {
            flush(&mut cur, &mut tokens);
        }
    }
    flush(&mut cur, &mut tokens);
    TokenSeq(tokens)
}

pub fn remove_stopwords(seq: TokenSeq, list: &StopwordList) -> TokenSeq {
    TokenSeq(seq.0.into_iter().filter(|t| !list.contains(t)).collect())
}

pub fn preprocess(text: &str, config: &PreprocConfig, model: Option<&SpellModel>) -> Result<TokenSeq, TextError> {
    let mut seq = tokenize(text);
    if config.spell_correct {
        let model = model.ok_or(TextError::MissingSpellModel)?;
        seq = TokenSeq(seq.0.iter().map(|t| spell_correct(t, model)).collect());
    }
    if config.remove_stopwords {
        seq = remove_stopwords(seq, &config.stopword_list);
    }
    if config.stem {
        seq = TokenSeq(seq.0.iter().map(|t| porter_stem(t)).collect());
    }
    Ok(seq)
}
