//! HTTP/JSON service hosting one environment and one agent for inspection:
//! manual or agent stepping, rollouts, the agent's outputs at each state and
//! observation saliency.

mod session;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rlforge::Action;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{Mutex, OwnedMutexGuard};
use tower_http::services::ServeDir;

pub use session::{action_labels, Meta, Saliency, Session, StepMode, StepRecord};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("{0}")]
    BadRequest(String),
    #[error("session busy")]
    Busy,
    #[error("episode is over; reset first")]
    EpisodeOver,
    #[error("non-finite value in response: {0}")]
    NonFinite(String),
    #[error("agent does not fit the environment: {0}")]
    Mismatch(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl VizError {
    pub fn status(&self) -> StatusCode {
        match self {
            VizError::BadRequest(_) => StatusCode::BAD_REQUEST,
            VizError::Busy | VizError::EpisodeOver => StatusCode::CONFLICT,
            VizError::NonFinite(_) | VizError::Mismatch(_) | VizError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for VizError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

/// Shared handle to the single session of a server.
#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<Session>>,
    meta: Arc<Meta>,
}

impl AppState {
    pub fn new(session: Session) -> Self {
        let meta = Arc::new(session.meta().clone());
        Self {
            session: Arc::new(Mutex::new(session)),
            meta,
        }
    }

    pub fn session(&self) -> &Arc<Mutex<Session>> {
        &self.session
    }

    /// Mutations never queue: a second one while the session is held is
    /// refused.
    fn claim(&self) -> Result<OwnedMutexGuard<Session>, VizError> {
        self.session.clone().try_lock_owned().map_err(|_| VizError::Busy)
    }
}

/// Runs `f` on the session off the async workers.
async fn with_session<T: Send + 'static>(
    guard: OwnedMutexGuard<Session>,
    f: impl FnOnce(&mut Session) -> Result<T, VizError> + Send + 'static,
) -> Result<T, VizError> {
    tokio::task::spawn_blocking(move || {
        let mut guard = guard;
        f(&mut guard)
    })
    .await
    .map_err(|e| VizError::Internal(e.to_string()))?
}

/// Parses a JSON body; an empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, VizError> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body.as_ref() };
    serde_json::from_slice(text).map_err(|e| VizError::BadRequest(format!("invalid request body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
struct ResetRequest {
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeName {
    Agent,
    Manual,
}

#[derive(Debug, Deserialize)]
struct StepRequest {
    mode: ModeName,
    #[serde(default)]
    action: Option<Value>,
}

#[derive(Debug, Deserialize)]
struct RolloutRequest {
    steps: i64,
}

/// Reads a manual action: an index, an action label, or an array (or a
/// single number) for continuous actions.
fn parse_action(v: &Value, meta: &Meta) -> Result<Action, VizError> {
    let discrete = meta.action_space.get("discrete").is_some();
    let bad = || VizError::BadRequest(format!("cannot read {v} as an action"));
    match v {
        Value::String(label) if discrete => meta
            .action_labels
            .iter()
            .position(|l| l == label)
            .map(Action::Discrete)
            .ok_or_else(|| VizError::BadRequest(format!("unknown action label {label:?}"))),
        Value::Number(n) if discrete => n.as_u64().map(|a| Action::Discrete(a as usize)).ok_or_else(bad),
        Value::Number(n) => n.as_f64().map(|x| Action::Continuous(vec![x])).ok_or_else(bad),
        Value::Array(xs) if !discrete => {
            xs.iter().map(|x| x.as_f64().ok_or_else(bad)).collect::<Result<_, _>>().map(Action::Continuous)
        }
        _ => Err(bad()),
    }
}

async fn meta(State(app): State<AppState>) -> Json<Meta> {
    Json(app.meta.as_ref().clone())
}

async fn reset(State(app): State<AppState>, body: Bytes) -> Result<Json<StepRecord>, VizError> {
    let req: ResetRequest = parse_body(&body)?;
    let guard = app.claim()?;
    with_session(guard, move |s| s.reset(req.seed)).await.map(Json)
}

async fn step(State(app): State<AppState>, body: Bytes) -> Result<Json<StepRecord>, VizError> {
    let req: StepRequest = parse_body(&body)?;
    let mode = match (req.mode, req.action) {
        (ModeName::Agent, _) => StepMode::Agent,
        (ModeName::Manual, Some(a)) => StepMode::Manual(parse_action(&a, &app.meta)?),
        (ModeName::Manual, None) => return Err(VizError::BadRequest("manual step needs an action".into())),
    };
    let guard = app.claim()?;
    with_session(guard, move |s| s.step(mode)).await.map(Json)
}

async fn rollout(State(app): State<AppState>, body: Bytes) -> Result<Json<Vec<StepRecord>>, VizError> {
    let req: RolloutRequest = parse_body(&body)?;
    let guard = app.claim()?;
    with_session(guard, move |s| s.rollout(req.steps)).await.map(Json)
}

async fn saliency(State(app): State<AppState>) -> Result<Json<Saliency>, VizError> {
    let guard = app.session.clone().lock_owned().await;
    with_session(guard, |s| s.saliency()).await.map(Json)
}

#[derive(Serialize)]
struct LogResponse<'a> {
    step: usize,
    done: bool,
    records: &'a [StepRecord],
}

async fn episode_log(State(app): State<AppState>) -> Json<Value> {
    let s = app.session.lock().await;
    Json(json!(LogResponse {
        step: s.step_index(),
        done: s.is_done(),
        records: s.log(),
    }))
}

const INDEX: &str = include_str!("../static/index.html");

async fn index() -> Html<&'static str> {
    Html(INDEX)
}

/// The API under `/api`, plus the UI bundle from `static_dir` at `/` (a
/// built-in page when none is given).
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/reset", post(reset))
        .route("/api/step", post(step))
        .route("/api/rollout", post(rollout))
        .route("/api/saliency", get(saliency))
        .route("/api/log", get(episode_log))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("serving on http://{addr}");
    }
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
