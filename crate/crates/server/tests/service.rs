use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use essay_core::corpus::split;
use essay_core::embeddings::Word2VecConfig;
use essay_core::pipeline::{train_bundle, EmbeddingChoice, PipelineConfig, ScoringBundle};
use essay_core::synthetic::{generate, SyntheticSpec};
use essay_service::{replay_sessions, router, ServiceConfig, ServiceError, SessionStore};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn bundle() -> ScoringBundle {
    static B: OnceLock<ScoringBundle> = OnceLock::new();
    B.get_or_init(|| {
        let spec = SyntheticSpec {
            n_essays: 150,
            essay_set: 4,
            ..Default::default()
        };
        let data = generate(&spec);
        let parts = split(&data, 0.85, 1).unwrap();
        let mut c = PipelineConfig::default().with_seed(2);
        c.dnn.hidden = 8;
        c.dnn.epochs = 5;
        c.lstm.hidden = 6;
        c.lstm.epochs = 2;
        c.forest.n_trees = 10;
        let w = Word2VecConfig {
            dim: 12,
            epochs: 2,
            ..Default::default()
        };
        train_bundle(&parts.train, spec.scale(), EmbeddingChoice::Train(w), &c).unwrap().0
    })
    .clone()
}

fn store(config: ServiceConfig) -> Arc<SessionStore> {
    Arc::new(SessionStore::new(vec![bundle()], config))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .header("origin", "http://localhost:5173")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

const TEXTS: [&str; 4] = [
    "photosynthesis uses sunlight",
    "photosynthesis uses sunlight and water in the leaf to make glucose",
    "the garden has a yellow bicycle",
    "",
];

#[tokio::test]
async fn session_lifecycle_over_http() {
    let app = router(store(ServiceConfig::default()));

    let (st, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!((st, v), (StatusCode::OK, json!({"status": "ok"})));

    let (st, v) = call(&app, "POST", "/sessions", Some(json!({"essay_set": 99}))).await;
    assert_eq!((st, v), (StatusCode::NOT_FOUND, json!({"error": "unknown_essay_set"})));

    let (st, a) = call(&app, "POST", "/sessions", Some(json!({"essay_set": 4}))).await;
    assert_eq!(st, StatusCode::CREATED);
    assert_eq!(a["essay_set"], 4);
    let (_, b) = call(&app, "POST", "/sessions", Some(json!({"essay_set": 4}))).await;
    let id = a["session_id"].as_str().unwrap().to_owned();
    assert_ne!(id, b["session_id"].as_str().unwrap());
    assert_eq!(id.len(), 32);

    let (st, t) = call(&app, "GET", &format!("/sessions/{id}/trajectory"), None).await;
    assert_eq!((st, t), (StatusCode::OK, json!({"points": [], "final": null})));

    let snap = format!("/sessions/{id}/snapshots");
    let (st, s1) = call(&app, "POST", &snap, Some(json!({"t_ms": 660, "text": TEXTS[1]}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s1["cached"], false);
    assert_eq!(s1["t_ms"], 660);
    for key in ["lstm", "dnn", "svm", "forest"] {
        assert!(s1["per_model"][key].is_i64());
    }
    assert!(s1["raw"].is_f64() && s1["latency_ms"].is_u64());
    let offline = bundle().score_text(TEXTS[1]).unwrap();
    assert_eq!(s1["score"], offline.score);

    let (_, s2) = call(&app, "POST", &snap, Some(json!({"t_ms": 1320, "text": TEXTS[1]}))).await;
    assert_eq!(s2["cached"], true);
    assert_eq!(s2["score"], s1["score"]);

    let (st, e) = call(&app, "POST", &snap, Some(json!({"t_ms": 1320, "text": TEXTS[0]}))).await;
    assert_eq!((st, e), (StatusCode::CONFLICT, json!({"error": "non_monotonic_time"})));

    let (st, _) = call(&app, "POST", &snap, Some(json!({"t_ms": "soon"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let (_, t) = call(&app, "GET", &format!("/sessions/{id}/trajectory"), None).await;
    assert_eq!(t["points"].as_array().unwrap().len(), 2);
    assert_eq!(t["points"][0]["t_ms"], 660);
    assert_eq!(t["final"], s1["score"]);

    let (st, closed) = call(&app, "POST", &format!("/sessions/{id}/close"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(closed, t);
    let (_, again) = call(&app, "POST", &format!("/sessions/{id}/close"), None).await;
    assert_eq!(again, t);
    let (st, e) = call(&app, "POST", &snap, Some(json!({"t_ms": 5000, "text": "x"}))).await;
    assert_eq!((st, e), (StatusCode::CONFLICT, json!({"error": "session_closed"})));

    let (st, e) = call(&app, "GET", "/sessions/nope/trajectory", None).await;
    assert_eq!((st, e), (StatusCode::NOT_FOUND, json!({"error": "unknown_session"})));
}

#[tokio::test]
async fn cors_allowlist() {
    let open = router(store(ServiceConfig::default()));
    let req = Request::get("/healthz").header("origin", "http://example.org").body(Body::empty()).unwrap();
    let resp = open.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");

    let config = ServiceConfig {
        cors_origins: vec!["http://localhost:5173".into()],
        ..Default::default()
    };
    let strict = router(store(config));
    let req = Request::get("/healthz").header("origin", "http://evil.test").body(Body::empty()).unwrap();
    let resp = strict.clone().oneshot(req).await.unwrap();
    assert!(resp.headers().get("access-control-allow-origin").is_none());
    let req = Request::get("/healthz").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = strict.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://localhost:5173");
}

#[test]
fn rejected_time_leaves_state_intact() {
    let s = store(ServiceConfig::default());
    let id = s.create_session(4).unwrap().session_id;
    s.submit_snapshot(&id, 10, TEXTS[0].into()).unwrap();
    let before = s.trajectory(&id).unwrap();
    assert_eq!(s.submit_snapshot(&id, 5, TEXTS[1].into()), Err(ServiceError::NonMonotonicTime));
    assert_eq!(s.submit_snapshot(&id, 10, TEXTS[1].into()), Err(ServiceError::NonMonotonicTime));
    assert_eq!(s.trajectory(&id).unwrap(), before);
}

#[test]
fn empty_answer_scores_lowest() {
    let s = store(ServiceConfig::default());
    let id = s.create_session(4).unwrap().session_id;
    let r = s.submit_snapshot(&id, 0, String::new()).unwrap();
    assert_eq!(r.score, 1);
}

#[test]
fn concurrent_sessions_are_isolated() {
    let s = store(ServiceConfig::default());
    let serial: Vec<_> = (0..2)
        .map(|k| {
            let id = s.create_session(4).unwrap().session_id;
            for (i, t) in TEXTS.iter().enumerate() {
                s.submit_snapshot(&id, (i as u64 + 1) * 100, format!("{t} {}", ["carbon", "uncle"][k]))
                    .unwrap();
            }
            s.trajectory(&id).unwrap()
        })
        .collect();

    let ids: Vec<String> = (0..2).map(|_| s.create_session(4).unwrap().session_id).collect();
    std::thread::scope(|scope| {
        for (k, id) in ids.iter().enumerate() {
            let s = &s;
            scope.spawn(move || {
                for (i, t) in TEXTS.iter().enumerate() {
                    s.submit_snapshot(id, (i as u64 + 1) * 100, format!("{t} {}", ["carbon", "uncle"][k]))
                        .unwrap();
                }
            });
        }
    });
    for (k, id) in ids.iter().enumerate() {
        assert_eq!(s.trajectory(id).unwrap(), serial[k]);
    }
}

#[test]
fn persistence_replays_and_idle_sessions_close() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let config = ServiceConfig {
        idle_timeout: Duration::from_millis(0),
        persist_path: Some(path.clone()),
        ..Default::default()
    };
    let s = store(config);
    let id = s.create_session(4).unwrap().session_id;
    for (i, t) in TEXTS.iter().enumerate() {
        s.submit_snapshot(&id, i as u64 * 660, (*t).into()).unwrap();
    }
    let live = s.trajectory(&id).unwrap();
    let idle = s.create_session(4).unwrap().session_id;

    s.close_session(&id).unwrap();
    s.close_session(&id).unwrap();
    std::thread::sleep(Duration::from_millis(2));
    assert_eq!(s.close_idle(Instant::now()), 1);
    assert!(!s.is_open(&idle).unwrap());
    assert_eq!(s.submit_snapshot(&idle, 1, "x".into()), Err(ServiceError::SessionClosed));

    let replayed = replay_sessions(&path).unwrap();
    assert_eq!(replayed.len(), 2);
    assert_eq!(replayed[0].session_id, id);
    assert_eq!(replayed[0].trajectory(), live);
    assert_eq!(replayed[0].snapshots[1].text, TEXTS[1]);
}
