//! Subcommands of the `essay-score` binary.

use std::collections::BTreeMap;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use essay_core::bundle::{load_bundle, save_bundle, BundleError};
use essay_core::corpus::{derive_scales, load_tsv, read_jsonl, records_for_set, split, write_jsonl, ColumnMap, CorpusError, EssayRecord, ScoreScale};
use essay_core::embeddings::{load_glove, EmbeddingError, EmbeddingSource, Word2VecConfig};
use essay_core::ensemble::{report_csv, ModelId, ReportRow};
use essay_core::metrics::{qwk_scores, MetricError};
use essay_core::pipeline::{train_bundle, EmbeddingChoice, PipelineConfig, PipelineError, ScoreOutput, ScoringBundle};
use essay_service::{ServiceConfig, SessionStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Usage(String),
    #[error("server: {0}")]
    Serve(std::io::Error),
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "essay-score", version, about = "Train, evaluate and serve automated answer-scoring models")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for the split, embeddings and every model.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Progress logging, including per-epoch training lines.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset and print one summary row per essay set.
    Ingest(IngestArgs),
    /// Train the four models for one essay set and write a bundle.
    Train(TrainArgs),
    /// Per-model and combined kappa of a bundle on labelled data.
    Evaluate(EvaluateArgs),
    /// Sweep embedding sources and dimensions; print the full kappa grid.
    Compare(CompareArgs),
    /// Score one answer read from a file or standard input.
    Score(ScoreArgs),
    /// Serve the snapshot-scoring HTTP interface.
    Serve(ServeArgs),
    /// Kappa between two score columns of a tab-separated file.
    Qwk(QwkArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "set")]
    pub essay_set: Option<u32>,
    /// Write the (filtered) records as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "set")]
    pub essay_set: Option<u32>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum)]
    pub embedding: Option<SourceArg>,
    /// GloVe text file; `{dim}` is replaced by the dimension.
    #[arg(long)]
    pub glove: Option<String>,
    /// Train share of the train/test split.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// The held-out part of the split recorded in the bundle.
    Test,
    /// Every record of the bundle's essay set.
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict to one essay set; otherwise kappas are averaged over sets.
    #[arg(long = "set")]
    pub essay_set: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub sources: Option<Vec<SourceArg>>,
    #[arg(long)]
    pub glove: Option<String>,
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Answer text file; standard input when absent.
    #[arg(long)]
    pub text_file: Option<PathBuf>,
    /// Add the scoring time in milliseconds to the output.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Bundle file; repeat for several essay sets.
    #[arg(long, required = true)]
    pub bundle: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Append closed sessions to this JSON-lines file.
    #[arg(long)]
    pub persist: Option<PathBuf>,
    /// Allowed browser origin; repeatable. Any origin when absent.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
    #[arg(long, default_value_t = 1800)]
    pub idle_timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct QwkArgs {
    /// Two integer columns (rater A, rater B); an optional header row.
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long)]
    pub min: Option<i32>,
    #[arg(long)]
    pub max: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    Word2vec,
    Glove,
}

impl From<SourceArg> for EmbeddingSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Word2vec => EmbeddingSource::Word2Vec,
            SourceArg::Glove => EmbeddingSource::Glove,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub source: SourceArg,
    pub dim: usize,
    /// GloVe path template with an optional `{dim}` placeholder.
    pub glove: Option<String>,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            source: SourceArg::Word2vec,
            dim: 300,
            glove: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub seed: u64,
    pub ratio: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { seed: 1, ratio: 0.85 }
    }
}

/// Contents of the `--config` JSON file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// TSV header names; JSON-lines input ignores them.
    pub columns: ColumnMap,
    pub essay_set: Option<u32>,
    pub output: Option<PathBuf>,
    pub embedding: EmbeddingSettings,
    pub split: SplitSettings,
    /// Dimensions swept by `compare`.
    pub dims: Vec<usize>,
    pub sources: Vec<SourceArg>,
    pub word2vec: Word2VecConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            columns: ColumnMap::default(),
            essay_set: None,
            output: None,
            embedding: EmbeddingSettings::default(),
            split: SplitSettings::default(),
            dims: vec![100, 200, 300],
            sources: vec![SourceArg::Word2vec, SourceArg::Glove],
            word2vec: Word2VecConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| input_err(path, e))
    }

    pub fn apply_globals(&mut self, seed: Option<u64>, verbose: bool) {
        if let Some(s) = seed {
            self.split.seed = s;
            self.word2vec.seed = s;
            self.pipeline = self.pipeline.clone().with_seed(s);
        }
        if verbose {
            self.pipeline.dnn.verbose = true;
            self.pipeline.lstm.verbose = true;
        }
    }

    fn data_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| self.data.clone())
            .ok_or_else(|| CliError::Usage("no dataset given (use --data or the config `data` field)".into()))
    }
}

/// Reads a TSV dataset, or JSON lines when the name ends in `.jsonl`.
pub fn load_records(path: &Path, columns: &ColumnMap) -> Result<Vec<EssayRecord>, CliError> {
    let records = if path.extension().is_some_and(|e| e == "jsonl") {
        let f = std::fs::File::open(path).map_err(|e| input_err(path, e))?;
        read_jsonl(std::io::BufReader::new(f))
    } else {
        if !path.exists() {
            return Err(input_err(path, "file not found"));
        }
        load_tsv(path, columns)
    };
    records.map_err(|e| match e {
        CorpusError::Io { .. } => e.into(),
        other => input_err(path, other),
    })
}

fn glove_path(template: &str, dim: usize) -> PathBuf {
    PathBuf::from(template.replace("{dim}", &dim.to_string()))
}

fn embedding_choice(
    source: SourceArg,
    dim: usize,
    glove: Option<&str>,
    w2v: &Word2VecConfig,
) -> Result<EmbeddingChoice, CliError> {
    match source {
        SourceArg::Word2vec => Ok(EmbeddingChoice::Train(Word2VecConfig { dim, ..w2v.clone() })),
        SourceArg::Glove => {
            let template = glove.ok_or_else(|| CliError::Usage("GloVe embeddings need --glove PATH".into()))?;
            let path = glove_path(template, dim);
            if !path.exists() {
                return Err(input_err(&path, "file not found"));
            }
            let table = load_glove(&path).map_err(|e| input_err(&path, e))?;
            if table.dim() != dim {
                return Err(input_err(&path, format!("vectors have dimension {}, expected {dim}", table.dim())));
            }
            Ok(EmbeddingChoice::Pretrained(table))
        }
    }
}

fn set_records(records: &[EssayRecord], set: u32) -> Result<(Vec<EssayRecord>, ScoreScale), CliError> {
    let scales = derive_scales(records)?;
    let scale = *scales
        .get(&set)
        .ok_or_else(|| CliError::Usage(format!("essay set {set} not present in the dataset")))?;
    Ok((records_for_set(records, set), scale))
}

/// Trained bundle, validation kappas and held-out records.
pub type SplitTraining = (ScoringBundle, BTreeMap<ModelId, f64>, Vec<EssayRecord>);

/// Splits one set's records, trains on the train part and returns the
/// bundle (with the split recorded) plus the held-out records.
pub fn train_on_split(
    records: &[EssayRecord],
    scale: ScoreScale,
    choice: EmbeddingChoice,
    config: &RunConfig,
    ratio: f64,
) -> Result<SplitTraining, CliError> {
    let parts = split(records, ratio, config.split.seed)?;
    let (mut bundle, summary) = train_bundle(&parts.train, scale, choice, &config.pipeline)?;
    bundle.split_seed = config.split.seed;
    bundle.split_ratio = ratio;
    Ok((bundle, summary.kappas, parts.test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestRow {
    pub essay_set: u32,
    pub essays: usize,
    pub scale: ScoreScale,
}

pub fn cmd_ingest(args: &IngestArgs, config: &RunConfig) -> Result<Vec<IngestRow>, CliError> {
    let path = config.data_path(&args.data)?;
    let mut records = load_records(&path, &config.columns)?;
    let set = args.essay_set.or(config.essay_set);
    if let Some(s) = set {
        records = set_records(&records, s)?.0;
    }
    let scales = derive_scales(&records)?;
    let rows = scales
        .values()
        .map(|&scale| IngestRow {
            essay_set: scale.set_id,
            essays: records.iter().filter(|r| r.essay_set == scale.set_id).count(),
            scale,
        })
        .collect();
    if let Some(out) = &args.out {
        let f = std::fs::File::create(out).map_err(|e| input_err(out, e))?;
        write_jsonl(&records, std::io::BufWriter::new(f))?;
    }
    Ok(rows)
}

pub fn cmd_train(args: &TrainArgs, config: &RunConfig) -> Result<(PathBuf, BTreeMap<ModelId, f64>), CliError> {
    let path = config.data_path(&args.data)?;
    let set = args
        .essay_set
        .or(config.essay_set)
        .ok_or_else(|| CliError::Usage("no essay set given (use --set)".into()))?;
    let dim = args.dim.unwrap_or(config.embedding.dim);
    let source = args.embedding.unwrap_or(config.embedding.source);
    let glove = args.glove.clone().or_else(|| config.embedding.glove.clone());
    let ratio = args.ratio.unwrap_or(config.split.ratio);
    let out = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from(format!("set{set}.bundle")));

    let records = load_records(&path, &config.columns)?;
    let (records, scale) = set_records(&records, set)?;
    let choice = embedding_choice(source, dim, glove.as_deref(), &config.word2vec)?;
    log::info!("training essay set {set} on {} records", records.len());
    let (bundle, kappas, _) = train_on_split(&records, scale, choice, config, ratio)?;
    save_bundle(&bundle, &out)?;
    Ok((out, kappas))
}

pub fn cmd_evaluate(args: &EvaluateArgs, config: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    let bundle = load_bundle(&args.bundle)?;
    let path = config.data_path(&args.data)?;
    let records = load_records(&path, &config.columns)?;
    let (records, _) = set_records(&records, bundle.essay_set)?;
    let eval = match args.split {
        SplitArg::All => records,
        SplitArg::Test => split(&records, bundle.split_ratio, bundle.split_seed)?.test,
    };
    Ok(bundle.evaluate(&eval).map_err(CliError::Pipeline)?.rows)
}

const ROW_MODELS: [&str; 5] = ["lstm", "dnn", "svm", "forest", "combined"];

fn row_key(r: &ReportRow) -> (usize, usize, std::cmp::Reverse<usize>) {
    let m = ROW_MODELS.iter().position(|&x| x == r.model).unwrap_or(ROW_MODELS.len());
    let s = match r.embedding {
        EmbeddingSource::Word2Vec => 0,
        EmbeddingSource::Glove => 1,
    };
    (m, s, std::cmp::Reverse(r.dim))
}

/// Sorts rows by model (lstm, dnn, svm, forest, combined), then source
/// (word2vec, glove), then descending dimension.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by_key(row_key);
}

pub fn cmd_compare(args: &CompareArgs, config: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    let path = config.data_path(&args.data)?;
    let records = load_records(&path, &config.columns)?;
    let scales = derive_scales(&records)?;
    let sets: Vec<u32> = match args.essay_set.or(config.essay_set) {
        Some(s) => vec![s],
        None => scales.keys().copied().collect(),
    };
    let dims = args.dims.clone().unwrap_or_else(|| config.dims.clone());
    let sources = args.sources.clone().unwrap_or_else(|| config.sources.clone());
    let glove = args.glove.clone().or_else(|| config.embedding.glove.clone());
    let ratio = args.ratio.unwrap_or(config.split.ratio);

    let mut rows = Vec::new();
    for &source in &sources {
        for &dim in &dims {
            let glove_missing = source == SourceArg::Glove
                && glove.as_deref().is_none_or(|t| !glove_path(t, dim).exists());
            if glove_missing {
                log::warn!("no GloVe file for dim {dim}; reporting glove rows as skipped");
                rows.extend(ROW_MODELS.iter().map(|m| ReportRow {
                    model: (*m).to_owned(),
                    embedding: source.into(),
                    dim,
                    qwk: None,
                }));
                continue;
            }
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            for &set in &sets {
                let (set_recs, scale) = set_records(&records, set)?;
                let choice = embedding_choice(source, dim, glove.as_deref(), &config.word2vec)?;
                log::info!("compare: set {set}, {source:?}, dim {dim}");
                let (bundle, _, test) = train_on_split(&set_recs, scale, choice, config, ratio)?;
                for r in bundle.evaluate(&test)?.rows {
                    *sums.entry(r.model).or_default() += r.qwk.unwrap_or(0.0);
                }
            }
            rows.extend(sums.into_iter().map(|(model, total)| ReportRow {
                model,
                embedding: source.into(),
                dim,
                qwk: Some(total / sets.len() as f64),
            }));
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreJson {
    #[serde(flatten)]
    pub output: ScoreOutput,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

/// Scores `text` with a loaded bundle exactly as the service does.
pub fn cmd_score(bundle: &ScoringBundle, text: &str, timing: bool) -> Result<ScoreJson, CliError> {
    let start = Instant::now();
    let output = bundle.score_text(text)?;
    Ok(ScoreJson {
        output,
        latency_ms: timing.then(|| start.elapsed().as_millis() as u64),
    })
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let mut bundles = Vec::new();
    for p in &args.bundle {
        let b = load_bundle(p)?;
        if bundles.iter().any(|x: &ScoringBundle| x.essay_set == b.essay_set) {
            return Err(CliError::Usage(format!("two bundles for essay set {}", b.essay_set)));
        }
        bundles.push(b);
    }
    let store = Arc::new(SessionStore::new(
        bundles,
        ServiceConfig {
            idle_timeout: Duration::from_secs(args.idle_timeout_secs),
            persist_path: args.persist.clone(),
            cors_origins: args.cors_origins.clone(),
        },
    ));
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
    runtime
        .block_on(essay_service::serve(store, args.addr))
        .map_err(CliError::Serve)
}

/// Reads two integer columns; a first line that does not parse is taken
/// as a header.
pub fn read_rating_pairs(path: &Path) -> Result<(Vec<i32>, Vec<i32>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let parsed = match cols.as_slice() {
            [x, y, ..] => x.parse::<i32>().ok().zip(y.parse::<i32>().ok()),
            _ => None,
        };
        match parsed {
            Some((x, y)) => {
                a.push(x);
                b.push(y);
            }
            None if i == 0 => continue,
            None => return Err(input_err(path, format!("line {}: expected two integer columns", i + 1))),
        }
    }
    if a.is_empty() {
        return Err(input_err(path, "no rating pairs"));
    }
    Ok((a, b))
}

pub fn cmd_qwk(args: &QwkArgs) -> Result<f64, CliError> {
    let (a, b) = read_rating_pairs(&args.file)?;
    let lo = a.iter().chain(&b).copied().min().unwrap_or(0);
    let hi = a.iter().chain(&b).copied().max().unwrap_or(0);
    let scale = ScoreScale::new(0, args.min.unwrap_or(lo), args.max.unwrap_or(hi.max(lo + 1)));
    Ok(qwk_scores(&a, &b, scale)?)
}

fn read_answer(args: &ScoreArgs) -> Result<String, CliError> {
    match &args.text_file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| input_err(p, e)),
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| input_err(Path::new("<stdin>"), e))?;
            Ok(s)
        }
    }
}

/// Runs a parsed command line, writing results to standard output.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.apply_globals(cli.seed, cli.verbose);
    match &cli.command {
        Command::Ingest(args) => {
            let rows = cmd_ingest(args, &config)?;
            println!("essay_set,essays,min_score,max_score");
            for r in rows {
                println!("{},{},{},{}", r.essay_set, r.essays, r.scale.min_score, r.scale.max_score);
            }
        }
        Command::Train(args) => {
            let (out, kappas) = cmd_train(args, &config)?;
            println!("model,kappa");
            for (m, k) in &kappas {
                println!("{m},{k:.4}");
            }
            eprintln!("bundle written to {}", out.display());
        }
        Command::Evaluate(args) => print!("{}", report_csv(&cmd_evaluate(args, &config)?)),
        Command::Compare(args) => print!("{}", report_csv(&cmd_compare(args, &config)?)),
        Command::Score(args) => {
            let bundle = load_bundle(&args.bundle)?;
            let text = read_answer(args)?;
            let out = cmd_score(&bundle, &text, args.timing)?;
            if let Some(w) = &out.output.warning {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string(&out).expect("score output serializes"));
        }
        Command::Serve(args) => cmd_serve(args)?,
        Command::Qwk(args) => println!("{}", cmd_qwk(args)?),
    }
    Ok(())
}
