use essay_core::bundle::{bundle_from_bytes, bundle_to_bytes, read_manifest, BundleError};
use essay_core::corpus::split;
use essay_core::embeddings::Word2VecConfig;
use essay_core::ensemble::ModelId;
use essay_core::pipeline::{train_bundle, EmbeddingChoice, PipelineConfig, ScoringBundle};
use essay_core::synthetic::{generate, SyntheticSpec};

fn quick_config() -> PipelineConfig {
    let mut c = PipelineConfig::default().with_seed(3);
    c.dnn.hidden = 16;
    c.dnn.epochs = 10;
    c.dnn.lr = 0.01;
    c.lstm.hidden = 8;
    c.lstm.epochs = 3;
    c.lstm.lr = 0.01;
    c.forest.n_trees = 15;
    c
}

fn w2v() -> Word2VecConfig {
    Word2VecConfig {
        dim: 16,
        epochs: 3,
        seed: 3,
        ..Default::default()
    }
}

fn small_bundle() -> (ScoringBundle, Vec<essay_core::corpus::EssayRecord>) {
    let spec = SyntheticSpec {
        n_essays: 160,
        ..Default::default()
    };
    let data = generate(&spec);
    let parts = split(&data, 0.85, 5).unwrap();
    let (b, _) = train_bundle(&parts.train, spec.scale(), EmbeddingChoice::Train(w2v()), &quick_config()).unwrap();
    (b, parts.test)
}

#[test]
fn bundle_round_trip_and_determinism() {
    let (a, test) = small_bundle();
    let (b, _) = small_bundle();
    let bytes_a = bundle_to_bytes(&a).unwrap();
    assert_eq!(bytes_a, bundle_to_bytes(&b).unwrap());

    let loaded = bundle_from_bytes(&bytes_a).unwrap();
    assert_eq!(loaded, a);
    for r in &test {
        assert_eq!(loaded.score_text(&r.text).unwrap(), a.score_text(&r.text).unwrap());
    }
    let m = read_manifest(&bytes_a).unwrap();
    assert_eq!(m.essay_set, 1);
    assert_eq!(m.kappas.len(), 4);
    assert_eq!(m.embedding.dim, 16);
}

#[test]
fn corrupted_bundles_rejected() {
    let (a, _) = small_bundle();
    let bytes = bundle_to_bytes(&a).unwrap();

    let mut flipped = bytes.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x55;
    assert!(matches!(bundle_from_bytes(&flipped), Err(BundleError::ChecksumMismatch(_))));

    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(bundle_from_bytes(&newer), Err(BundleError::VersionUnsupported(99))));

    assert!(matches!(bundle_from_bytes(b"nope"), Err(BundleError::BadMagic)));
    assert!(bundle_from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn scoring_rules() {
    let (b, test) = small_bundle();
    let empty = b.score_text("").unwrap();
    assert_eq!(empty.score, 1);
    assert_eq!(empty.coverage, 0.0);
    assert!(empty.warning.is_some());
    assert!(empty.per_model.values().all(|&s| s == 1));

    let oov = b.score_text("zzzz qqqq").unwrap();
    assert_eq!(oov.score, 1);

    let text = &test[0].text;
    let one = b.score_text(text).unwrap();
    assert_eq!(one, b.score_text(text).unwrap());
    assert_eq!(one.per_model.keys().copied().collect::<Vec<_>>(), ModelId::ALL.to_vec());
    assert!(b.scale.contains(one.score));
    let json = serde_json::to_value(&one).unwrap();
    assert!(json["per_model"]["lstm"].is_i64());
    assert!(json.get("warning").is_none());

    let report = b.evaluate(&test).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert_eq!(report.rows[4].model, "combined");
}
