//! Single-file model bundle: a JSON manifest followed by length-prefixed
//! binary sections. Matrices are stored as little-endian `f64`.
//!
//! Layout: `b"AESB"`, `u32` format version, `u64` manifest length, the
//! manifest, then each section listed in the manifest as a `u64` length and
//! its bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ScoreScale;
use crate::embeddings::{EmbeddingError, EmbeddingSource, EmbeddingTable};
use crate::ensemble::ModelId;
use crate::forest::Forest;
use crate::neural::{DenseLayer, DnnModel, LstmModel, LstmWeights};
use crate::pipeline::{ScoringBundle, Standardizer};
use crate::svm::{SvmBinary, SvmMulti, SvmParams};
use crate::textproc::{PreprocConfig, SpellModel};

pub const MAGIC: &[u8; 4] = b"AESB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model bundle (bad magic bytes)")]
    BadMagic,
    #[error("bundle format version {0} is not supported (expected {BUNDLE_VERSION})")]
    VersionUnsupported(u32),
    #[error("corrupt bundle: {0}")]
    Corrupt(String),
    #[error("checksum mismatch in section `{0}`")]
    ChecksumMismatch(String),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub name: String,
    pub len: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub source: EmbeddingSource,
    pub dim: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetManifest {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineManifest {
    pub n_support: usize,
    pub bias: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmManifest {
    pub classes: Vec<i32>,
    pub n_features: usize,
    pub params: SvmParams,
    pub machines: Vec<MachineManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub essay_set: u32,
    pub scale: ScoreScale,
    pub embedding: EmbeddingManifest,
    pub max_seq_len: usize,
    pub preproc: PreprocConfig,
    pub kappas: BTreeMap<ModelId, f64>,
    pub split: SplitManifest,
    pub dnn: NetManifest,
    pub lstm: NetManifest,
    pub svm: SvmManifest,
    pub forest_trees: usize,
    pub sections: Vec<SectionEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential reader of `f64` blocks out of one section.
struct F64Reader<'a> {
    name: &'a str,
    bytes: &'a [u8],
}

impl F64Reader<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>, BundleError> {
        let need = n * 8;
        if self.bytes.len() < need {
            return Err(BundleError::Corrupt(format!("section `{}` is truncated", self.name)));
        }
        let (head, rest) = self.bytes.split_at(need);
        self.bytes = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn finish(self) -> Result<(), BundleError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(BundleError::Corrupt(format!("section `{}` has trailing bytes", self.name)))
        }
    }
}

fn sections_of(b: &ScoringBundle) -> Result<Vec<(&'static str, Vec<u8>)>, BundleError> {
    let mut vocab = String::new();
    for w in b.table.words() {
        vocab.push_str(w);
        vocab.push('\n');
    }
    let mut vectors = Vec::new();
    put_f64s(&mut vectors, b.table.vectors());

    let mut std = Vec::new();
    put_f64s(&mut std, &b.standardizer.mean);
    put_f64s(&mut std, &b.standardizer.std);

    let mut dnn = Vec::new();
    for block in [&b.dnn.hidden.weights, &b.dnn.hidden.bias, &b.dnn.output.weights, &b.dnn.output.bias] {
        put_f64s(&mut dnn, block);
    }

    let w = &b.lstm.weights;
    let mut lstm = Vec::new();
    for block in [&w.wx, &w.wh, &w.b, &w.head.weights, &w.head.bias] {
        put_f64s(&mut lstm, block);
    }

    let mut svm = Vec::new();
    for m in &b.svm.machines {
        for sv in &m.support_vectors {
            put_f64s(&mut svm, sv);
        }
        put_f64s(&mut svm, &m.coef);
    }

    let mut out = vec![
        ("embedding.words", vocab.into_bytes()),
        ("embedding.vectors", vectors),
        ("standardizer", std),
        ("dnn", dnn),
        ("lstm", lstm),
        ("svm", svm),
        ("forest", serde_json::to_vec(&b.forest)?),
    ];
    if let Some(spell) = &b.spell {
        out.push(("spell", serde_json::to_vec(spell)?));
    }
    Ok(out)
}

pub fn manifest_for(b: &ScoringBundle, sections: Vec<SectionEntry>) -> BundleManifest {
    BundleManifest {
        version: BUNDLE_VERSION,
        essay_set: b.essay_set,
        scale: b.scale,
        embedding: EmbeddingManifest {
            source: b.table.source(),
            dim: b.table.dim(),
            vocab_size: b.table.len(),
        },
        max_seq_len: b.max_seq_len,
        preproc: b.preproc.clone(),
        kappas: b.kappas.clone(),
        split: SplitManifest {
            seed: b.split_seed,
            ratio: b.split_ratio,
        },
        dnn: NetManifest {
            input_dim: b.dnn.hidden.inp,
            hidden: b.dnn.hidden.out,
            classes: b.dnn.classes.clone(),
        },
        lstm: NetManifest {
            input_dim: b.lstm.weights.input_dim,
            hidden: b.lstm.weights.hidden,
            classes: b.lstm.classes.clone(),
        },
        svm: SvmManifest {
            classes: b.svm.classes.clone(),
            n_features: b.svm.n_features,
            params: b.svm.params.clone(),
            machines: b
                .svm
                .machines
                .iter()
                .map(|m| MachineManifest {
                    n_support: m.support_vectors.len(),
                    bias: m.bias,
                    gamma: m.gamma,
                })
                .collect(),
        },
        forest_trees: b.forest.trees.len(),
        sections,
    }
}

pub fn bundle_to_bytes(b: &ScoringBundle) -> Result<Vec<u8>, BundleError> {
    let sections = sections_of(b)?;
    let entries = sections
        .iter()
        .map(|(name, bytes)| SectionEntry {
            name: (*name).to_owned(),
            len: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        })
        .collect();
    let manifest = serde_json::to_vec_pretty(&manifest_for(b, entries))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, bytes) in &sections {
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], BundleError> {
        if self.0.len() < n {
            return Err(BundleError::Corrupt(format!("truncated while reading {what}")));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u64(&mut self, what: &str) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<(BundleManifest, Cursor<'_>), BundleError> {
    let mut cur = Cursor(bytes);
    if cur.take(4, "magic").map_err(|_| BundleError::BadMagic)? != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != BUNDLE_VERSION {
        return Err(BundleError::VersionUnsupported(version));
    }
    let mlen = cur.u64("manifest length")? as usize;
    let manifest: BundleManifest = serde_json::from_slice(cur.take(mlen, "manifest")?)?;
    if manifest.version != version {
        return Err(BundleError::Corrupt("manifest and header versions differ".into()));
    }
    Ok((manifest, cur))
}

/// Reads only the manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<BundleManifest, BundleError> {
    parse_header(bytes).map(|(m, _)| m)
}

pub fn bundle_from_bytes(bytes: &[u8]) -> Result<ScoringBundle, BundleError> {
    let (m, mut cur) = parse_header(bytes)?;
    let mut sections: BTreeMap<&str, &[u8]> = BTreeMap::new();
    for entry in &m.sections {
        let len = cur.u64(&entry.name)?;
        if len != entry.len {
            return Err(BundleError::Corrupt(format!("section `{}` length differs from manifest", entry.name)));
        }
        let body = cur.take(len as usize, &entry.name)?;
        if sha256_hex(body) != entry.sha256 {
            return Err(BundleError::ChecksumMismatch(entry.name.clone()));
        }
        sections.insert(entry.name.as_str(), body);
    }
    if !cur.0.is_empty() {
        return Err(BundleError::Corrupt("trailing bytes after the last section".into()));
    }
    let section = |name: &'static str| -> Result<&[u8], BundleError> {
        sections
            .get(name)
            .copied()
            .ok_or_else(|| BundleError::Corrupt(format!("missing section `{name}`")))
    };
    let reader = |name: &'static str| -> Result<F64Reader<'_>, BundleError> { Ok(F64Reader { name, bytes: section(name)? }) };

    let dim = m.embedding.dim;
    let words: Vec<String> = std::str::from_utf8(section("embedding.words")?)
        .map_err(|_| BundleError::Corrupt("vocabulary is not UTF-8".into()))?
        .lines()
        .map(str::to_owned)
        .collect();
    if words.len() != m.embedding.vocab_size {
        return Err(BundleError::Corrupt("vocabulary size differs from manifest".into()));
    }
    let mut r = reader("embedding.vectors")?;
    let vectors = r.take(words.len() * dim)?;
    r.finish()?;
    let table = EmbeddingTable::new(dim, words, vectors, m.embedding.source)?;

    let mut r = reader("standardizer")?;
    let standardizer = Standardizer {
        mean: r.take(dim)?,
        std: r.take(dim)?,
    };
    r.finish()?;

    let kappa = |id: ModelId| m.kappas.get(&id).copied().unwrap_or(0.0);

    let (d, h, n) = (m.dnn.input_dim, m.dnn.hidden, m.dnn.classes.len());
    let mut r = reader("dnn")?;
    let hidden = DenseLayer {
        inp: d,
        out: h,
        weights: r.take(d * h)?,
        bias: r.take(h)?,
    };
    let output = DenseLayer {
        inp: h,
        out: n,
        weights: r.take(h * n)?,
        bias: r.take(n)?,
    };
    r.finish()?;
    let dnn = DnnModel {
        hidden,
        output,
        classes: m.dnn.classes.clone(),
        kappa: kappa(ModelId::Dnn),
    };

    let (d, h, n) = (m.lstm.input_dim, m.lstm.hidden, m.lstm.classes.len());
    let mut r = reader("lstm")?;
    let weights = LstmWeights {
        input_dim: d,
        hidden: h,
        wx: r.take(4 * h * d)?,
        wh: r.take(4 * h * h)?,
        b: r.take(4 * h)?,
        head: DenseLayer {
            inp: h,
            out: n,
            weights: r.take(h * n)?,
            bias: r.take(n)?,
        },
    };
    r.finish()?;
    let lstm = LstmModel {
        weights,
        classes: m.lstm.classes.clone(),
        kappa: kappa(ModelId::Lstm),
    };

    if m.svm.machines.len() != m.svm.classes.len() {
        return Err(BundleError::Corrupt("one SVM machine per class expected".into()));
    }
    let mut r = reader("svm")?;
    let mut machines = Vec::with_capacity(m.svm.machines.len());
    for mm in &m.svm.machines {
        let support_vectors = (0..mm.n_support)
            .map(|_| r.take(m.svm.n_features))
            .collect::<Result<Vec<_>, _>>()?;
        machines.push(SvmBinary {
            support_vectors,
            coef: r.take(mm.n_support)?,
            bias: mm.bias,
            gamma: mm.gamma,
        });
    }
    r.finish()?;
    let svm = SvmMulti {
        machines,
        classes: m.svm.classes.clone(),
        n_features: m.svm.n_features,
        params: m.svm.params.clone(),
    };

    let forest: Forest = serde_json::from_slice(section("forest")?)?;
    if forest.trees.len() != m.forest_trees {
        return Err(BundleError::Corrupt("forest size differs from manifest".into()));
    }
    let spell: Option<SpellModel> = match sections.get("spell") {
        Some(bytes) => Some(serde_json::from_slice(bytes)?),
        None => None,
    };
    if m.preproc.spell_correct && spell.is_none() {
        return Err(BundleError::Corrupt("spell correction enabled but no spelling model stored".into()));
    }

    Ok(ScoringBundle {
        essay_set: m.essay_set,
        scale: m.scale,
        preproc: m.preproc,
        spell,
        max_seq_len: m.max_seq_len,
        table,
        standardizer,
        dnn,
        lstm,
        svm,
        forest,
        kappas: m.kappas,
        split_seed: m.split.seed,
        split_ratio: m.split.ratio,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_bundle(b: &ScoringBundle, path: impl AsRef<Path>) -> Result<(), BundleError> {
    let path = path.as_ref();
    let bytes = bundle_to_bytes(b)?;
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ScoringBundle, BundleError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    bundle_from_bytes(&bytes)
}
