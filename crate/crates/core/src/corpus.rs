//! Graded-essay corpus ingestion, per-set score scales and stratified splits.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed tsv at line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}: column `{column}` is not an integer: {value:?}")]
    NonIntegerScore {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {0}: essay text is empty")]
    EmptyText(u64),
    #[error("essay set {0} has no records")]
    EmptySet(u32),
    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("degenerate score scale for set {set_id}: [{min}, {max}]")]
    DegenerateScale { set_id: u32, min: i32, max: i32 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One hand-graded answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub essay_id: u64,
    pub essay_set: u32,
    pub text: String,
    #[serde(rename = "score")]
    pub human_score: i32,
}

/// Inclusive integer score range of one essay set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub set_id: u32,
    pub min_score: i32,
    pub max_score: i32,
}

impl ScoreScale {
    pub fn new(set_id: u32, min_score: i32, max_score: i32) -> Self {
        Self {
            set_id,
            min_score,
            max_score,
        }
    }

    pub fn n_levels(&self) -> usize {
        (self.max_score as i64 - self.min_score as i64 + 1).max(0) as usize
    }

    pub fn contains(&self, score: i32) -> bool {
        score >= self.min_score && score <= self.max_score
    }

    /// Index of `score` in `0..n_levels`.
    pub fn index_of(&self, score: i32) -> Option<usize> {
        self.contains(score)
            .then(|| (score - self.min_score) as usize)
    }

    pub fn score_at(&self, index: usize) -> i32 {
        self.min_score + index as i32
    }

    pub fn clamp(&self, score: i64) -> i32 {
        score.clamp(self.min_score as i64, self.max_score as i64) as i32
    }

    /// Rejects scales with fewer than two levels.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_score > self.min_score {
            Ok(())
        } else {
            Err(CorpusError::DegenerateScale {
                set_id: self.set_id,
                min: self.min_score,
                max: self.max_score,
            })
        }
    }
}

/// Header names of the four columns the loader reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub essay_id: String,
    pub essay_set: String,
    pub text: String,
    pub score: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            essay_id: "essay_id".into(),
            essay_set: "essay_set".into(),
            text: "essay".into(),
            score: "domain1_score".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<EssayRecord>,
    pub test: Vec<EssayRecord>,
    pub seed: u64,
    pub ratio: f64,
}

/// Decodes one field: UTF-8 when valid, otherwise Windows-1252.
fn decode_field(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_owned(),
        Err(_) => {
            let (text, _, _) = encoding_rs::WINDOWS_1252.decode(bytes);
            text.into_owned()
        }
    }
}

pub fn load_tsv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Vec<EssayRecord>, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_tsv(std::io::BufReader::new(file), columns)
}

pub fn read_tsv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Vec<EssayRecord>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr
        .byte_headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| -> Result<usize, CorpusError> {
        header
            .iter()
            .position(|h| decode_field(h).trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_owned()))
    };
    let id_col = find(&columns.essay_id)?;
    let set_col = find(&columns.essay_set)?;
    let text_col = find(&columns.text)?;
    let score_col = find(&columns.score)?;

    let mut records = Vec::new();
    let mut row = csv::ByteRecord::new();
    loop {
        let more = rdr.read_byte_record(&mut row).map_err(|e| CorpusError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row.get(0).map(|f| f.is_empty()).unwrap_or(true) {
            continue;
        }
        let field = |idx: usize, name: &str| -> Result<String, CorpusError> {
            row.get(idx).map(decode_field).ok_or_else(|| CorpusError::Malformed {
                line,
                message: format!("row is missing column `{name}`"),
            })
        };
        let int = |idx: usize, name: &str| -> Result<i64, CorpusError> {
            let raw = field(idx, name)?;
            raw.trim().parse::<i64>().map_err(|_| CorpusError::NonIntegerScore {
                line,
                column: name.to_owned(),
                value: raw,
            })
        };
        let essay_id = int(id_col, &columns.essay_id)?;
        let essay_set = int(set_col, &columns.essay_set)?;
        let human_score = int(score_col, &columns.score)?;
        let text = field(text_col, &columns.text)?;
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText(line));
        }
        records.push(EssayRecord {
            essay_id: essay_id as u64,
            essay_set: essay_set as u32,
            text,
            human_score: human_score as i32,
        });
    }
    Ok(records)
}

/// Observed score range per essay set.
pub fn derive_scales(records: &[EssayRecord]) -> Result<BTreeMap<u32, ScoreScale>, CorpusError> {
    let mut scales: BTreeMap<u32, ScoreScale> = BTreeMap::new();
    for r in records {
        scales
            .entry(r.essay_set)
            .and_modify(|s| {
                s.min_score = s.min_score.min(r.human_score);
                s.max_score = s.max_score.max(r.human_score);
            })
            .or_insert_with(|| ScoreScale::new(r.essay_set, r.human_score, r.human_score));
    }
    if scales.is_empty() {
        return Err(CorpusError::EmptySet(0));
    }
    Ok(scales)
}

pub fn records_for_set(records: &[EssayRecord], set_id: u32) -> Vec<EssayRecord> {
    records.iter().filter(|r| r.essay_set == set_id).cloned().collect()
}

/// Seeded split stratified by essay set.
///
/// The global train count is `round(ratio * n)` (kept in `1..n`); it is
/// apportioned across sets by largest remainder so every set lands within
/// one record of its own exact share.
pub fn split(records: &[EssayRecord], ratio: f64, seed: u64) -> Result<DatasetSplit, CorpusError> {
    if records.len() < 2 {
        return Err(CorpusError::TooFewRecords(records.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let mut by_set: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_set.entry(r.essay_set).or_default().push(i);
    }

    let n = records.len();
    let total_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);

    let mut quotas: Vec<(u32, usize, f64)> = by_set
        .iter()
        .map(|(&set, idx)| {
            let exact = ratio * idx.len() as f64;
            (set, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut remaining = total_train.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        quotas[b]
            .2
            .partial_cmp(&quotas[a].2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(quotas[a].0.cmp(&quotas[b].0))
    });
    for &k in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        let cap = by_set[&quotas[k].0].len();
        if quotas[k].1 < cap {
            quotas[k].1 += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(total_train);
    let mut test = Vec::with_capacity(n - total_train);
    for (set, take, _) in quotas {
        let mut idx = by_set[&set].clone();
        idx.shuffle(&mut rng);
        train.extend(idx[..take].iter().map(|&i| records[i].clone()));
        test.extend(idx[take..].iter().map(|&i| records[i].clone()));
    }
    Ok(DatasetSplit {
        train,
        test,
        seed,
        ratio,
    })
}

/// Canonical JSON-lines dump, one record per line.
pub fn write_jsonl<W: Write>(records: &[EssayRecord], mut out: W) -> Result<(), CorpusError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|source| CorpusError::Io {
            path: "<output>".into(),
            source,
        })?;
    }
    Ok(())
}

pub fn read_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<EssayRecord>, CorpusError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|source| CorpusError::Io {
            path: "<input>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "essay_id\tessay_set\tessay\trater1_domain1\tdomain1_score\n";

    fn rec(id: u64, set: u32, score: i32) -> EssayRecord {
        EssayRecord {
            essay_id: id,
            essay_set: set,
            text: format!("essay {id}"),
            human_score: score,
        }
    }

    #[test]
    fn loads_quoted_row() {
        let data = format!("{HEADER}1\t1\t\"Dear local newspaper...\"\t4\t8\n");
        let recs = read_tsv(data.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(
            recs,
            vec![EssayRecord {
                essay_id: 1,
                essay_set: 1,
                text: "Dear local newspaper...".into(),
                human_score: 8
            }]
        );
    }

    #[test]
    fn non_integer_score_names_line() {
        let data = format!("{HEADER}1\t1\tok\t4\t8\n2\t1\tfine\t4\teight\n");
        match read_tsv(data.as_bytes(), &ColumnMap::default()) {
            Err(CorpusError::NonIntegerScore { line, value, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(value, "eight");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_text_and_missing_column() {
        let data = format!("{HEADER}1\t1\t   \t4\t8\n");
        assert!(matches!(
            read_tsv(data.as_bytes(), &ColumnMap::default()),
            Err(CorpusError::EmptyText(2))
        ));
        let data = "essay_id\tessay\n1\tx\n";
        assert!(matches!(
            read_tsv(data.as_bytes(), &ColumnMap::default()),
            Err(CorpusError::MissingColumn(c)) if c == "essay_set"
        ));
    }

    #[test]
    fn remapped_columns() {
        let data = "id\tprompt\tanswer\tgrade\n7\t2\thello there\t3\n";
        let map = ColumnMap {
            essay_id: "id".into(),
            essay_set: "prompt".into(),
            text: "answer".into(),
            score: "grade".into(),
        };
        let recs = read_tsv(data.as_bytes(), &map).unwrap();
        assert_eq!(recs[0].essay_id, 7);
        assert_eq!(recs[0].essay_set, 2);
        assert_eq!(recs[0].text, "hello there");
    }

    #[test]
    fn windows_1252_text_is_transcoded() {
        let mut data = HEADER.as_bytes().to_vec();
        data.extend_from_slice(b"1\t1\tcaf\xe9 \x93quoted\x94\t4\t8\n");
        let recs = read_tsv(&data[..], &ColumnMap::default()).unwrap();
        assert_eq!(recs[0].text, "caf\u{e9} \u{201c}quoted\u{201d}");
    }

    #[test]
    fn scales_per_set() {
        let mut recs: Vec<_> = (2..=12).map(|s| rec(s as u64, 1, s)).collect();
        recs.push(rec(100, 3, 0));
        recs.push(rec(101, 3, 3));
        let scales = derive_scales(&recs).unwrap();
        assert_eq!(scales[&1], ScoreScale::new(1, 2, 12));
        assert_eq!(scales[&1].n_levels(), 11);
        assert_eq!(scales[&3], ScoreScale::new(3, 0, 3));

        let single = derive_scales(&[rec(1, 5, 5)]).unwrap();
        assert_eq!(single[&5].n_levels(), 1);
        assert!(single[&5].validate().is_err());
        assert!(matches!(derive_scales(&[]), Err(CorpusError::EmptySet(_))));
    }

    #[test]
    fn split_arithmetic_and_determinism() {
        let recs: Vec<_> = (0..100).map(|i| rec(i, 1, (i % 4) as i32)).collect();
        let a = split(&recs, 0.85, 7).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (85, 15));
        let b = split(&recs, 0.85, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = split(&recs, 0.85, 8).unwrap();
        assert_ne!(a.train, c.train);
        assert!(matches!(split(&recs[..1], 0.85, 7), Err(CorpusError::TooFewRecords(1))));
        assert!(matches!(split(&recs, 1.0, 7), Err(CorpusError::InvalidRatio(_))));
    }

    #[test]
    fn jsonl_dump_shape() {
        let mut buf = Vec::new();
        write_jsonl(&[rec(1, 1, 8)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"essay_id\":1,\"essay_set\":1,\"text\":\"essay 1\",\"score\":8}\n"
        );
        assert_eq!(read_jsonl(&buf[..]).unwrap(), vec![rec(1, 1, 8)]);
    }

    proptest! {
        #[test]
        fn split_partitions_and_stratifies(
            sizes in proptest::collection::vec(1usize..60, 1..6),
            ratio in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let mut recs = Vec::new();
            let mut id = 0;
            for (s, &n) in sizes.iter().enumerate() {
                for _ in 0..n {
                    recs.push(rec(id, s as u32 + 1, 0));
                    id += 1;
                }
            }
            prop_assume!(recs.len() >= 2);
            let sp = split(&recs, ratio, seed).unwrap();
            let mut ids: Vec<u64> = sp.train.iter().chain(&sp.test).map(|r| r.essay_id).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..recs.len() as u64).collect::<Vec<_>>());

            let n = recs.len() as f64;
            prop_assert!((sp.train.len() as f64 - ratio * n).abs() <= 1.0);
            for (s, &size) in sizes.iter().enumerate() {
                let set = s as u32 + 1;
                let tr = sp.train.iter().filter(|r| r.essay_set == set).count() as f64;
                prop_assert!((tr - ratio * size as f64).abs() <= 2.0);
            }
        }
    }
}
