use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use essay_cli::{cmd_score, sort_rows, RunConfig};
use essay_core::bundle::load_bundle;
use essay_core::corpus::write_jsonl;
use essay_core::embeddings::EmbeddingSource;
use essay_core::ensemble::ReportRow;
use essay_core::synthetic::{generate, SyntheticSpec};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_essay-score"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_data(dir: &Path) -> PathBuf {
    let spec = SyntheticSpec {
        n_essays: 140,
        essay_set: 3,
        ..Default::default()
    };
    let path = dir.join("data.jsonl");
    write_jsonl(&generate(&spec), std::fs::File::create(&path).unwrap()).unwrap();
    path
}

fn write_config(dir: &Path, data: &Path) -> PathBuf {
    let config = json!({
        "data": data,
        "essay_set": 3,
        "embedding": {"source": "word2vec", "dim": 12},
        "dims": [12, 8],
        "word2vec": {"epochs": 2},
        "pipeline": {
            "dnn": {"hidden": 8, "epochs": 4, "lr": 0.01},
            "lstm": {"hidden": 6, "epochs": 2, "lr": 0.01},
            "forest": {"n_trees": 8}
        }
    });
    let path = dir.join("run.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

#[test]
fn train_evaluate_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let config = write_config(dir.path(), &data);
    let bundle = dir.path().join("s3.bundle");
    let cfg = config.to_str().unwrap();
    let out = bundle.to_str().unwrap();

    let o = run(&["--config", cfg, "ingest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "essay_set,essays,min_score,max_score\n3,140,1,4\n");

    let o = run(&["--config", cfg, "--seed", "9", "train", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(lines[0], "model,kappa");
    assert_eq!(lines.len(), 5);
    let loaded = load_bundle(&bundle).unwrap();
    assert_eq!((loaded.split_seed, loaded.split_ratio), (9, 0.85));

    let o = run(&["--config", cfg, "evaluate", "--bundle", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "model,embedding,dim,qwk");
    assert_eq!(rows.len(), 6);
    assert!(rows[5].starts_with("combined,word2vec,12,"));

    let answer = dir.path().join("answer.txt");
    std::fs::write(&answer, "photosynthesis needs sunlight water and carbon").unwrap();
    let o = run(&["score", "--bundle", out, "--text-file", answer.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v.get("latency_ms").is_none());
    let direct = cmd_score(&loaded, "photosynthesis needs sunlight water and carbon", false).unwrap();
    assert_eq!(v, serde_json::to_value(&direct).unwrap());

    let o = run(&["score", "--timing", "--bundle", out, "--text-file", answer.to_str().unwrap()]);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["latency_ms"].is_u64());
}

#[test]
fn compare_grid_marks_missing_glove_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let config = write_config(dir.path(), &data);
    let o = run(&[
        "--config",
        config.to_str().unwrap(),
        "compare",
        "--glove",
        dir.path().join("absent.{dim}d.txt").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    let keys: Vec<(&str, &str, &str)> = rows.iter().map(|r| (r[0], r[1], r[2])).collect();
    assert_eq!(&keys[..4], &[
        ("lstm", "word2vec", "12"),
        ("lstm", "word2vec", "8"),
        ("lstm", "glove", "12"),
        ("lstm", "glove", "8"),
    ]);
    assert_eq!(keys[16].0, "combined");
    for r in &rows {
        assert_eq!(r[3] == "skipped", r[1] == "glove", "{r:?}");
    }
}

#[test]
fn errors_exit_two_and_name_the_path() {
    let o = run(&["ingest", "--data", "/nonexistent/essays.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/essays.tsv"));

    let o = run(&["score", "--bundle", "/nonexistent/x.bundle", "--text-file", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/x.bundle"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"));

    let ratings = dir.path().join("r.tsv");
    std::fs::write(&ratings, "a\tb\n1\t2\nx\t1\n").unwrap();
    let o = run(&["qwk", "--file", ratings.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"));
}

#[test]
fn qwk_command_matches_hand_value() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("r.tsv");
    // Observed [[1,1],[0,2]]; expected [[0.5,1.5],[0.5,1.5]]; kappa = 1 - 1/2.
    std::fs::write(&ratings, "rater_a\trater_b\n0\t0\n0\t1\n1\t1\n1\t1\n").unwrap();
    let o = run(&["qwk", "--file", ratings.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let k: f64 = stdout(&o).trim().parse().unwrap();
    assert!((k - 0.5).abs() < 1e-12, "{k}");
}

#[test]
fn rows_sort_by_model_source_then_dim_descending() {
    let row = |m: &str, e, d| ReportRow {
        model: m.into(),
        embedding: e,
        dim: d,
        qwk: None,
    };
    let mut rows = vec![
        row("combined", EmbeddingSource::Word2Vec, 100),
        row("svm", EmbeddingSource::Glove, 300),
        row("lstm", EmbeddingSource::Glove, 100),
        row("lstm", EmbeddingSource::Word2Vec, 100),
        row("lstm", EmbeddingSource::Word2Vec, 300),
    ];
    sort_rows(&mut rows);
    let got: Vec<String> = rows.iter().map(|r| format!("{r}")).collect();
    assert_eq!(got, [
        "lstm,word2vec,300,skipped",
        "lstm,word2vec,100,skipped",
        "lstm,glove,100,skipped",
        "svm,glove,300,skipped",
        "combined,word2vec,100,skipped",
    ]);
}

#[test]
fn seed_flag_overrides_every_seed() {
    let mut c = RunConfig::default();
    c.apply_globals(Some(42), false);
    assert_eq!(c.split.seed, 42);
    assert_eq!(c.word2vec.seed, 42);
    assert_eq!(c.pipeline.seed, 42);
    assert_eq!(c.pipeline.dnn.seed, 42);
    assert_eq!(c.pipeline.lstm.seed, 42);
    assert_eq!(c.pipeline.forest.seed, 42);
}

#[test]
fn tsv_columns_remap_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("sas.tsv");
    std::fs::write(&tsv, "Id\tEssaySet\tScore1\tEssayText\n1\t5\t0\tcells divide\n2\t5\t3\tmitosis splits the nucleus\n3\t6\t2\tthe cell\n").unwrap();
    let config = dir.path().join("run.json");
    let cols = json!({"columns": {"essay_id": "Id", "essay_set": "EssaySet", "text": "EssayText", "score": "Score1"}});
    std::fs::write(&config, cols.to_string()).unwrap();
    let o = run(&["--config", config.to_str().unwrap(), "ingest", "--data", tsv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "essay_set,essays,min_score,max_score\n5,2,0,3\n6,1,2,2\n");

    let o = run(&["ingest", "--data", tsv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sas.tsv"), "{}", stderr(&o));
}
