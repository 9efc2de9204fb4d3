//! REST front end over editing sessions.
//!
//! Every handler maps onto one editing operation; the store only adds ids,
//! idle expiry and a lock per session.

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hedkit::alignment::AlignmentDoc;
use hedkit::editing::{intensity_sweep, EdSource, EditRecord, SweepPoint, SweepTemplate, NOMINAL_PHONE_S};
use hedkit::renderer::Scope;
use hedkit::{EdPredictor, EditCommand, EditSession, HierarchicalEd, PhonemeAlignedEd, ProsodyContour, ProsodyRenderer, Segmentation};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::commands::scope_for;
use crate::fsio::{parse_text, write_atomic};

/// Immutable models shared by all sessions.
#[derive(Clone, Default)]
pub struct Models {
    pub predictor: Option<Arc<EdPredictor>>,
    pub renderer: Option<Arc<dyn ProsodyRenderer + Send + Sync>>,
}

pub struct SessionEntry {
    pub session: EditSession,
    pub speaker: usize,
}

struct Slot {
    entry: Arc<Mutex<SessionEntry>>,
    last_access: Instant,
}

/// Sessions by id, dropped after `ttl` without access.
pub struct SessionStore {
    ttl: Duration,
    slots: Mutex<HashMap<Uuid, Slot>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    fn slots(&self) -> std::sync::MutexGuard<'_, HashMap<Uuid, Slot>> {
        self.slots.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn insert(&self, entry: SessionEntry, now: Instant) -> (Uuid, Arc<Mutex<SessionEntry>>) {
        let mut slots = self.slots();
        let mut id = Uuid::new_v4();
        while slots.contains_key(&id) {
            id = Uuid::new_v4();
        }
        let entry = Arc::new(Mutex::new(entry));
        slots.insert(
            id,
            Slot {
                entry: entry.clone(),
                last_access: now,
            },
        );
        (id, entry)
    }

    /// Look up and touch a session; an expired one is removed instead.
    pub fn get(&self, id: &Uuid, now: Instant) -> Option<Arc<Mutex<SessionEntry>>> {
        let mut slots = self.slots();
        let slot = slots.get_mut(id)?;
        if now.saturating_duration_since(slot.last_access) > self.ttl {
            slots.remove(id);
            return None;
        }
        slot.last_access = now;
        Some(slot.entry.clone())
    }

    pub fn remove(&self, id: &Uuid) -> bool {
        self.slots().remove(id).is_some()
    }

    pub fn evict_expired(&self, now: Instant) -> usize {
        let mut slots = self.slots();
        let before = slots.len();
        slots.retain(|_, s| now.saturating_duration_since(s.last_access) <= self.ttl);
        before - slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Inner {
    models: Models,
    store: SessionStore,
    snapshot_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(models: Models, ttl: Duration, snapshot_dir: Option<PathBuf>) -> Self {
        Self {
            inner: Arc::new(Inner {
                models,
                store: SessionStore::new(ttl),
                snapshot_dir,
            }),
        }
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    fn models(&self) -> &Models {
        &self.inner.models
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Invalid(String),
    Internal(String),
}

impl From<hedkit::Error> for ApiError {
    fn from(e: hedkit::Error) -> Self {
        match e {
            hedkit::Error::Io { .. } | hedkit::Error::Replay { .. } => ApiError::Internal(e.to_string()),
            other => ApiError::Invalid(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": m })),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Invalid(m) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": m })),
            ApiError::Internal(m) => {
                let id = Uuid::new_v4();
                eprintln!("internal error {id}: {m}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "internal error", "id": id }))
            }
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ApiError::Invalid(e.to_string()),
        _ => ApiError::BadRequest(e.to_string()),
    })
}

fn lookup(state: &AppState, id: &str) -> ApiResult<(Uuid, Arc<Mutex<SessionEntry>>)> {
    let missing = || ApiError::NotFound(format!("no session {id}"));
    let uuid = Uuid::parse_str(id).map_err(|_| missing())?;
    let entry = state.store().get(&uuid, Instant::now()).ok_or_else(missing)?;
    Ok((uuid, entry))
}

fn lock(entry: &Mutex<SessionEntry>) -> ApiResult<std::sync::MutexGuard<'_, SessionEntry>> {
    entry.lock().map_err(|_| ApiError::Internal("session lock poisoned".into()))
}

fn no_renderer() -> ApiError {
    ApiError::Invalid("no renderer loaded".into())
}

fn render_current(models: &Models, entry: &SessionEntry) -> ApiResult<Option<ProsodyContour>> {
    let Some(r) = &models.renderer else {
        return Ok(None);
    };
    let s = &entry.session;
    Ok(Some(r.render_text(&s.words(), s.aligned(), entry.speaker)?))
}

#[derive(Serialize)]
struct SessionView<'a> {
    id: Uuid,
    source: EdSource,
    speaker: usize,
    words: Vec<Vec<String>>,
    segmentation: AlignmentDoc,
    ed: &'a HierarchicalEd,
    base: &'a HierarchicalEd,
    aligned: &'a PhonemeAlignedEd,
    log: &'a [EditRecord],
    contour: Option<ProsodyContour>,
}

fn view(models: &Models, id: Uuid, entry: &SessionEntry) -> ApiResult<Value> {
    let s = &entry.session;
    let v = SessionView {
        id,
        source: s.source(),
        speaker: entry.speaker,
        words: s.words(),
        segmentation: s.segmentation().to_doc(),
        ed: s.current(),
        base: s.base(),
        aligned: s.aligned(),
        log: s.log(),
        contour: render_current(models, entry)?,
    };
    serde_json::to_value(v).map_err(|e| ApiError::Internal(e.to_string()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TextPayload {
    Plain(String),
    Words(Vec<Vec<String>>),
}

/// `POST /sessions` body: text to predict from, an extracted ED with its
/// alignment (or text), or a saved snapshot.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    text: Option<TextPayload>,
    ed: Option<HierarchicalEd>,
    alignment: Option<AlignmentDoc>,
    snapshot: Option<Value>,
    mode: Option<EdSource>,
    #[serde(default)]
    speaker: usize,
}

fn words_of(text: TextPayload) -> ApiResult<Vec<Vec<String>>> {
    match text {
        TextPayload::Plain(s) => parse_text(&s).map_err(|e| ApiError::Invalid(e.to_string())),
        TextPayload::Words(w) => {
            if w.is_empty() || w.iter().any(Vec::is_empty) {
                return Err(ApiError::Invalid("text must have at least one word and no empty words".into()));
            }
            Ok(w)
        }
    }
}

fn build_session(models: &Models, body: CreateBody) -> ApiResult<EditSession> {
    let predictor = models.predictor.clone();
    let check_mode = |expected: EdSource| match body.mode {
        Some(m) if m != expected => Err(ApiError::Invalid(format!("mode {m:?} does not match the payload"))),
        _ => Ok(()),
    };
    if let Some(snapshot) = body.snapshot {
        if body.text.is_some() || body.ed.is_some() || body.alignment.is_some() {
            return Err(ApiError::Invalid("snapshot cannot be combined with text, ed or alignment".into()));
        }
        // A snapshot that fails to replay is bad input here, not a server fault.
        let session = EditSession::from_json(&snapshot.to_string(), predictor).map_err(|e| ApiError::Invalid(e.to_string()))?;
        check_mode(session.source())?;
        return Ok(session);
    }
    if let Some(ed) = body.ed {
        check_mode(EdSource::ExtractedFromAudio)?;
        let seg = match (body.alignment, body.text) {
            (Some(doc), _) => Segmentation::try_from(doc)?,
            (None, Some(t)) => Segmentation::nominal(&words_of(t)?, NOMINAL_PHONE_S)?,
            (None, None) => return Err(ApiError::Invalid("an ED payload needs an alignment or text".into())),
        };
        return Ok(EditSession::from_extracted(ed, seg, predictor)?);
    }
    if let Some(text) = body.text {
        check_mode(EdSource::PredictedFromText)?;
        let predictor = predictor.ok_or_else(|| ApiError::Invalid("no predictor loaded".into()))?;
        return Ok(EditSession::from_text(predictor, &words_of(text)?)?);
    }
    Err(ApiError::Invalid("body needs text, ed or snapshot".into()))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let body: CreateBody = parse_body(&body)?;
    let speaker = body.speaker;
    let session = build_session(state.models(), body)?;
    let entry = SessionEntry { session, speaker };
    // Render once up front so a bad speaker id fails here, not on every edit.
    render_current(state.models(), &entry)?;
    let (id, entry) = state.store().insert(entry, Instant::now());
    let guard = lock(&entry)?;
    Ok((StatusCode::CREATED, Json(view(state.models(), id, &guard)?)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (uuid, entry) = lookup(&state, &id)?;
    let guard = lock(&entry)?;
    Ok(Json(view(state.models(), uuid, &guard)?))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let uuid = Uuid::parse_str(&id).map_err(|_| ApiError::NotFound(format!("no session {id}")))?;
    if state.store().remove(&uuid) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::NotFound(format!("no session {id}")))
    }
}

async fn post_edit(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let cmd: EditCommand = parse_body(&body)?;
    let (uuid, entry) = lookup(&state, &id)?;
    let mut guard = lock(&entry)?;
    guard.session.apply_edit(cmd)?;
    Ok(Json(view(state.models(), uuid, &guard)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepBody {
    template: SweepTemplate,
    values: Vec<f64>,
    scope: Option<Scope>,
    speaker: Option<usize>,
}

#[derive(Serialize)]
struct SweepView<'a> {
    points: Vec<SweepPoint>,
    ed: &'a HierarchicalEd,
}

async fn post_sweep(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let body: SweepBody = parse_body(&body)?;
    let (_, entry) = lookup(&state, &id)?;
    let renderer = state.models().renderer.clone().ok_or_else(no_renderer)?;
    let guard = lock(&entry)?;
    let scope = match (body.scope, body.template.targets.first()) {
        (Some(s), _) => s,
        (None, Some(&(level, index))) => scope_for(level, index),
        (None, None) => return Err(ApiError::Invalid("sweep template has no targets".into())),
    };
    let speaker = body.speaker.unwrap_or(guard.speaker);
    let points = intensity_sweep(&guard.session, &body.template, &body.values, renderer.as_ref(), speaker, scope)?;
    let v = SweepView {
        points,
        ed: guard.session.current(),
    };
    Ok(Json(serde_json::to_value(v).map_err(|e| ApiError::Internal(e.to_string()))?))
}

async fn get_contour(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, entry) = lookup(&state, &id)?;
    let guard = lock(&entry)?;
    let contour = render_current(state.models(), &guard)?.ok_or_else(no_renderer)?;
    Ok(Json(json!({ "contour": contour, "ed": guard.session.current() })))
}

async fn save_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (uuid, entry) = lookup(&state, &id)?;
    let guard = lock(&entry)?;
    let text = guard.session.to_json();
    let path = match &state.inner.snapshot_dir {
        Some(dir) => {
            let path = dir.join(format!("{uuid}.json"));
            write_atomic(&path, text.as_bytes()).map_err(|e| ApiError::Internal(e.to_string()))?;
            Some(path)
        }
        None => None,
    };
    let snapshot: Value = serde_json::from_str(&text).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({
        "id": uuid,
        "path": path,
        "snapshot": snapshot,
        "ed": guard.session.current(),
    })))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/edits", post(post_edit))
        .route("/sessions/{id}/sweep", post(post_sweep))
        .route("/sessions/{id}/contour", get(get_contour))
        .route("/sessions/{id}/save", post(save_session))
        .with_state(state)
}

/// Resolves on Ctrl-C, or SIGTERM on unix.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serve until `shutdown` resolves, evicting idle sessions in the background.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let period = (state.store().ttl() / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    let sweeper = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                state.store().evict_expired(Instant::now());
            }
        })
    };
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    result
}
