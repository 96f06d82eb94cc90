use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use essay_core::ensemble::ModelId;
use essay_core::pipeline::ScoringBundle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session")]
    UnknownSession,
    #[error("session is closed")]
    SessionClosed,
    #[error("snapshot time must be greater than the previous one")]
    NonMonotonicTime,
    #[error("no model bundle is loaded for essay set {0}")]
    UnknownEssaySet(u32),
    #[error("scoring failed: {0}")]
    Scoring(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession => "unknown_session",
            ServiceError::SessionClosed => "session_closed",
            ServiceError::NonMonotonicTime => "non_monotonic_time",
            ServiceError::UnknownEssaySet(_) => "unknown_essay_set",
            ServiceError::Scoring(_) => "scoring_failed",
            ServiceError::BadRequest(_) => "bad_request",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Open sessions without activity for this long are closed.
    pub idle_timeout: Duration,
    /// Closed sessions are appended here as JSON lines.
    pub persist_path: Option<PathBuf>,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            idle_timeout: Duration::from_secs(30 * 60),
            persist_path: None,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub t_ms: u64,
    pub text: String,
    pub score: i32,
    pub per_model: BTreeMap<ModelId, i32>,
    pub raw: f64,
    pub cached: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotResponse {
    pub t_ms: u64,
    pub score: i32,
    pub per_model: BTreeMap<ModelId, i32>,
    pub raw: f64,
    pub cached: bool,
    pub latency_ms: u64,
}

impl From<&SnapshotRecord> for SnapshotResponse {
    fn from(r: &SnapshotRecord) -> Self {
        Self {
            t_ms: r.t_ms,
            score: r.score,
            per_model: r.per_model.clone(),
            raw: r.raw,
            cached: r.cached,
            latency_ms: r.latency_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t_ms: u64,
    pub score: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    #[serde(rename = "final")]
    pub final_score: Option<i32>,
}

impl Trajectory {
    fn of(snapshots: &[SnapshotRecord]) -> Self {
        let points: Vec<TrajectoryPoint> = snapshots
            .iter()
            .map(|s| TrajectoryPoint {
                t_ms: s.t_ms,
                score: s.score,
            })
            .collect();
        Self {
            final_score: points.last().map(|p| p.score),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub essay_set: u32,
}

/// One line of the persistence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedSession {
    pub session_id: String,
    pub essay_set: u32,
    pub created_at_ms: u64,
    pub snapshots: Vec<SnapshotRecord>,
}

impl PersistedSession {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::of(&self.snapshots)
    }
}

/// Reads every session record from a persistence file.
pub fn replay_sessions(path: impl AsRef<Path>) -> std::io::Result<Vec<PersistedSession>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[derive(Debug)]
struct Session {
    id: String,
    essay_set: u32,
    created_at_ms: u64,
    last_activity: Instant,
    snapshots: Vec<SnapshotRecord>,
    open: bool,
}

impl Session {
    fn persisted(&self) -> PersistedSession {
        PersistedSession {
            session_id: self.id.clone(),
            essay_set: self.essay_set,
            created_at_ms: self.created_at_ms,
            snapshots: self.snapshots.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetInfo {
    pub essay_set: u32,
    pub min_score: i32,
    pub max_score: i32,
    pub dim: usize,
}

/// Loaded bundles plus all sessions. Each session has its own lock; the
/// session table lock is only held for lookups and inserts.
pub struct SessionStore {
    bundles: BTreeMap<u32, Arc<ScoringBundle>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    persist_lock: Mutex<()>,
    config: ServiceConfig,
}

fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl SessionStore {
    pub fn new(bundles: Vec<ScoringBundle>, config: ServiceConfig) -> Self {
        Self {
            bundles: bundles.into_iter().map(|b| (b.essay_set, Arc::new(b))).collect(),
            sessions: RwLock::new(HashMap::new()),
            persist_lock: Mutex::new(()),
            config,
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn essay_sets(&self) -> Vec<SetInfo> {
        self.bundles
            .values()
            .map(|b| SetInfo {
                essay_set: b.essay_set,
                min_score: b.scale.min_score,
                max_score: b.scale.max_score,
                dim: b.dim(),
            })
            .collect()
    }

    pub fn bundle(&self, essay_set: u32) -> Option<&Arc<ScoringBundle>> {
        self.bundles.get(&essay_set)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or(ServiceError::UnknownSession)
    }

    pub fn create_session(&self, essay_set: u32) -> Result<CreatedSession, ServiceError> {
        if !self.bundles.contains_key(&essay_set) {
            return Err(ServiceError::UnknownEssaySet(essay_set));
        }
        let mut table = self.sessions.write().expect("session table poisoned");
        let mut id = new_session_id();
        while table.contains_key(&id) {
            id = new_session_id();
        }
        table.insert(
            id.clone(),
            Arc::new(Mutex::new(Session {
                id: id.clone(),
                essay_set,
                created_at_ms: unix_ms(),
                last_activity: Instant::now(),
                snapshots: Vec::new(),
                open: true,
            })),
        );
        Ok(CreatedSession {
            session_id: id,
            essay_set,
        })
    }

    /// Scores `text` and appends it to the session. Blocks while scoring;
    /// call from a blocking-capable thread.
    pub fn submit_snapshot(&self, id: &str, t_ms: u64, text: String) -> Result<SnapshotResponse, ServiceError> {
        let session = self.session(id)?;
        let mut s = session.lock().expect("session poisoned");
        if !s.open {
            return Err(ServiceError::SessionClosed);
        }
        if s.snapshots.last().is_some_and(|p| t_ms <= p.t_ms) {
            return Err(ServiceError::NonMonotonicTime);
        }
        let start = Instant::now();
        let record = match s.snapshots.last() {
            Some(prev) if prev.text == text => SnapshotRecord {
                t_ms,
                text,
                score: prev.score,
                per_model: prev.per_model.clone(),
                raw: prev.raw,
                cached: true,
                latency_ms: start.elapsed().as_millis() as u64,
            },
            _ => {
                let bundle = self
                    .bundles
                    .get(&s.essay_set)
                    .ok_or(ServiceError::UnknownEssaySet(s.essay_set))?;
                let out = bundle.score_text(&text).map_err(|e| ServiceError::Scoring(e.to_string()))?;
                SnapshotRecord {
                    t_ms,
                    text,
                    score: out.score,
                    per_model: out.per_model,
                    raw: out.raw,
                    cached: false,
                    latency_ms: start.elapsed().as_millis() as u64,
                }
            }
        };
        let response = SnapshotResponse::from(&record);
        s.snapshots.push(record);
        s.last_activity = Instant::now();
        Ok(response)
    }

    pub fn trajectory(&self, id: &str) -> Result<Trajectory, ServiceError> {
        let session = self.session(id)?;
        let s = session.lock().expect("session poisoned");
        Ok(Trajectory::of(&s.snapshots))
    }

    pub fn is_open(&self, id: &str) -> Result<bool, ServiceError> {
        Ok(self.session(id)?.lock().expect("session poisoned").open)
    }

    /// Closes the session, persisting it the first time. Closing again
    /// returns the same trajectory.
    pub fn close_session(&self, id: &str) -> Result<Trajectory, ServiceError> {
        let session = self.session(id)?;
        let mut s = session.lock().expect("session poisoned");
        if s.open {
            s.open = false;
            self.persist(&s);
        }
        Ok(Trajectory::of(&s.snapshots))
    }

    /// Closes open sessions idle for longer than the configured timeout as
    /// of `now`; returns how many were closed.
    pub fn close_idle(&self, now: Instant) -> usize {
        let all: Vec<Arc<Mutex<Session>>> = self
            .sessions
            .read()
            .expect("session table poisoned")
            .values()
            .cloned()
            .collect();
        let mut closed = 0;
        for session in all {
            let mut s = session.lock().expect("session poisoned");
            if s.open && now.saturating_duration_since(s.last_activity) > self.config.idle_timeout {
                s.open = false;
                self.persist(&s);
                closed += 1;
            }
        }
        closed
    }

    fn persist(&self, s: &Session) {
        let Some(path) = &self.config.persist_path else {
            return;
        };
        let _guard = self.persist_lock.lock().expect("persist lock poisoned");
        let line = match serde_json::to_string(&s.persisted()) {
            Ok(l) => l,
            Err(e) => {
                log::error!("cannot serialize session {}: {e}", s.id);
                return;
            }
        };
        let result = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = result {
            log::error!("cannot persist session {} to {}: {e}", s.id, path.display());
        }
    }
}
