//! Real-time snapshot scoring over HTTP + JSON.
//!
//! Routes:
//! - `POST /sessions` `{"essay_set": n}` creates a session (201)
//! - `POST /sessions/{id}/snapshots` `{"t_ms": t, "text": s}` scores a snapshot
//! - `GET /sessions/{id}/trajectory` returns the `(t, score)` series
//! - `POST /sessions/{id}/close` closes the session
//! - `GET /healthz`, `GET /sets`

mod session;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use session::{
    replay_sessions, CreatedSession, PersistedSession, ServiceConfig, ServiceError, SessionStore, SetInfo,
    SnapshotRecord, SnapshotResponse, Trajectory, TrajectoryPoint,
};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::UnknownSession | ServiceError::UnknownEssaySet(_) => StatusCode::NOT_FOUND,
            ServiceError::SessionClosed | ServiceError::NonMonotonicTime => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Scoring(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.code() }))).into_response()
    }
}

#[derive(Deserialize)]
struct CreateRequest {
    essay_set: u32,
}

#[derive(Deserialize)]
struct SnapshotRequest {
    t_ms: u64,
    text: String,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Scoring(e.to_string()))?
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    payload: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreatedSession>), ServiceError> {
    let req = body(payload)?;
    Ok((StatusCode::CREATED, Json(store.create_session(req.essay_set)?)))
}

async fn submit_snapshot(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    payload: Result<Json<SnapshotRequest>, JsonRejection>,
) -> Result<Json<SnapshotResponse>, ServiceError> {
    let req = body(payload)?;
    blocking(move || store.submit_snapshot(&id, req.t_ms, req.text)).await.map(Json)
}

async fn trajectory(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<Json<Trajectory>, ServiceError> {
    store.trajectory(&id).map(Json)
}

async fn close_session(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<Json<Trajectory>, ServiceError> {
    blocking(move || store.close_session(&id)).await.map(Json)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn sets(State(store): State<Arc<SessionStore>>) -> Json<Vec<SetInfo>> {
    Json(store.essay_sets())
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    if origins.is_empty() {
        layer.allow_origin(AllowOrigin::any())
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        layer.allow_origin(AllowOrigin::list(list))
    }
}

pub fn router(store: Arc<SessionStore>) -> Router {
    let cors = cors(&store.config().cors_origins);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/snapshots", post(submit_snapshot))
        .route("/sessions/{id}/trajectory", get(trajectory))
        .route("/sessions/{id}/close", post(close_session))
        .route("/healthz", get(healthz))
        .route("/sets", get(sets))
        .layer(cors)
        .with_state(store)
}

/// Serves on an already bound listener until `shutdown` resolves, closing
/// idle sessions in the background.
pub async fn serve_on(
    listener: TcpListener,
    store: Arc<SessionStore>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweep_every = (store.config().idle_timeout / 2).clamp(Duration::from_millis(10), Duration::from_secs(60));
    let sweeper = {
        let store = store.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(sweep_every);
            loop {
                tick.tick().await;
                let store = store.clone();
                let closed = tokio::task::spawn_blocking(move || store.close_idle(Instant::now()))
                    .await
                    .unwrap_or(0);
                if closed > 0 {
                    log::info!("closed {closed} idle session(s)");
                }
            }
        })
    };
    let result = axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    result
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(store: Arc<SessionStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_on(listener, store, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
