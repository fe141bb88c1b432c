//! JSON-over-HTTP API with server-sent event streams.
//!
//! Teachers see supervisor replies as ordinary student turns; provenance and
//! diagnostics are only exposed to requests carrying the supervisor token.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use iqa_core::dialogue::{Phase, SessionEvent, Speaker, Turn, TurnOutcome};
use iqa_core::scenario::ScenarioSeed;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::hub::{Hub, HubError};
use crate::log::{LogRecord, RecordKind};
use crate::survey::Role;

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    pub token: String,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    phase: Option<Phase>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), phase: None }
    }

    fn from_hub(err: HubError, hub: &Hub, session: Option<&str>) -> Self {
        let code = err.code();
        let status = match code {
            "unknown_session" | "unknown_ticket" => StatusCode::NOT_FOUND,
            "not_claimant" => StatusCode::FORBIDDEN,
            "validation" | "empty_reply" | "invalid_scenario" => StatusCode::UNPROCESSABLE_ENTITY,
            "storage" | "internal" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        let phase = session.and_then(|s| hub.phase(s).ok());
        Self { status, code, message: err.to_string(), phase }
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "supervisor token required")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "phase": self.phase });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// What the teacher panel sees of a turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherTurnView {
    pub id: u64,
    pub speaker: Speaker,
    pub text: String,
    pub timestamp: u64,
}

impl From<&Turn> for TeacherTurnView {
    fn from(t: &Turn) -> Self {
        let speaker = match t.speaker {
            Speaker::SupervisorAsStudent => Speaker::Student,
            s => s,
        };
        Self { id: t.id, speaker, text: t.text.clone(), timestamp: t.timestamp }
    }
}

/// Teacher-stream event derived from one log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherEvent {
    pub session: String,
    pub seq: u64,
    pub phase: Phase,
    pub turns: Vec<TeacherTurnView>,
}

pub fn teacher_event(record: &LogRecord) -> Option<TeacherEvent> {
    if record.kind != RecordKind::Turn {
        return None;
    }
    let event: SessionEvent = record.payload_as().ok()?;
    let (turns, phase): (Vec<&Turn>, Phase) = match &event {
        SessionEvent::Opened { greeting, .. } => (vec![greeting], Phase::AwaitingTeacher),
        SessionEvent::TeacherTurn { teacher, outcome: TurnOutcome::StudentReply { turn }, .. } => {
            (vec![teacher, turn], Phase::AwaitingTeacher)
        }
        SessionEvent::TeacherTurn { teacher, outcome: TurnOutcome::Escalated { .. }, .. } => {
            (vec![teacher], Phase::AwaitingSupervisor)
        }
        SessionEvent::SupervisorReply { turn, .. } => (vec![turn], Phase::AwaitingTeacher),
        SessionEvent::Closed { .. } => (vec![], Phase::Closed),
    };
    Some(TeacherEvent {
        session: record.session.clone(),
        seq: record.seq,
        phase,
        turns: turns.into_iter().map(TeacherTurnView::from).collect(),
    })
}

fn token_from(headers: &HeaderMap, query: Option<&str>) -> Option<String> {
    if let Some(v) = headers.get("x-supervisor-token").and_then(|v| v.to_str().ok()) {
        return Some(v.to_string());
    }
    if let Some(v) = headers.get("authorization").and_then(|v| v.to_str().ok()) {
        if let Some(t) = v.strip_prefix("Bearer ") {
            return Some(t.to_string());
        }
    }
    query.map(str::to_string)
}

fn is_supervisor(state: &AppState, headers: &HeaderMap, query: Option<&str>) -> bool {
    token_from(headers, query).is_some_and(|t| t == state.token)
}

fn require_supervisor(state: &AppState, headers: &HeaderMap, query: Option<&str>) -> ApiResult<()> {
    if is_supervisor(state, headers, query) {
        Ok(())
    } else {
        Err(ApiError::unauthorized())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/survey", get(survey_definition))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/survey", post(submit_survey))
        .route("/tickets", get(list_tickets))
        .route("/tickets/events", get(queue_events))
        .route("/tickets/{id}/claim", post(claim))
        .route("/tickets/{id}/resolve", post(resolve))
        .with_state(state)
}

async fn survey_definition(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.hub.survey_definition().clone())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    scenario: Option<ScenarioSeed>,
}

async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    // An empty body means the default scenario.
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string()))?
    };
    let created = state
        .hub
        .create_session(req.scenario.as_ref(), now_ms())
        .map_err(|e| ApiError::from_hub(e, &state.hub, None))?;
    let body = json!({
        "session": created.session,
        "phase": created.phase,
        "greeting": TeacherTurnView::from(&created.greeting),
    });
    Ok((StatusCode::CREATED, Json(body)))
}

#[derive(Debug, Deserialize)]
struct Utterance {
    text: String,
}

async fn post_utterance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Utterance>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let hub = &state.hub;
    let result = hub.post_utterance(&id, &req.text, now_ms()).map_err(|e| ApiError::from_hub(e, hub, Some(&id)))?;
    let turns: Vec<TeacherTurnView> = result.turns.iter().map(TeacherTurnView::from).collect();
    Ok(Json(json!({ "session": id, "outcome": result.outcome, "phase": result.phase, "turns": turns })))
}

#[derive(Debug, Default, Deserialize)]
struct TranscriptQuery {
    since: Option<u64>,
    token: Option<String>,
}

async fn transcript(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let hub = &state.hub;
    let t = hub.transcript(&id, q.since).map_err(|e| ApiError::from_hub(e, hub, Some(&id)))?;
    if is_supervisor(&state, &headers, q.token.as_deref()) {
        return Ok(Json(t).into_response());
    }
    let turns: Vec<TeacherTurnView> = t.turns.iter().map(TeacherTurnView::from).collect();
    Ok(Json(json!({ "session": t.session, "phase": t.phase, "turns": turns })).into_response())
}

#[derive(Debug, Deserialize)]
struct SurveyBody {
    answers: Vec<u8>,
    #[serde(default = "teacher_role")]
    role: Role,
}

fn teacher_role() -> Role {
    Role::Teacher
}

async fn submit_survey(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SurveyBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let hub = &state.hub;
    let stored =
        hub.submit_survey(&id, req.answers, req.role, now_ms()).map_err(|e| ApiError::from_hub(e, hub, Some(&id)))?;
    Ok((StatusCode::CREATED, Json(json!({ "survey": stored, "phase": Phase::Closed }))))
}

#[derive(Debug, Default, Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn list_tickets(
    State(state): State<AppState>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    require_supervisor(&state, &headers, q.token.as_deref())?;
    Ok(Json(json!({ "tickets": state.hub.pending_tickets() })))
}

#[derive(Debug, Deserialize)]
struct ClaimBody {
    supervisor: String,
}

async fn claim(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<ClaimBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    require_supervisor(&state, &headers, None)?;
    let Json(req) = body?;
    let hub = &state.hub;
    let ticket = hub.claim(&id, &req.supervisor, now_ms()).map_err(|e| ApiError::from_hub(e, hub, None))?;
    Ok(Json(json!({ "ticket": ticket })))
}

#[derive(Debug, Deserialize)]
struct ResolveBody {
    supervisor: String,
    text: String,
}

async fn resolve(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<ResolveBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    require_supervisor(&state, &headers, None)?;
    let Json(req) = body?;
    let hub = &state.hub;
    let r = hub.resolve(&id, &req.supervisor, &req.text, now_ms()).map_err(|e| ApiError::from_hub(e, hub, None))?;
    Ok(Json(r))
}

fn record_stream<F>(hub: &Hub, map: F) -> impl Stream<Item = Result<Event, Infallible>> + use<F>
where
    F: Fn(&LogRecord) -> Option<Event> + Send + 'static,
{
    let rx = hub.subscribe();
    futures::stream::unfold((rx, map), |(mut rx, map)| async move {
        loop {
            match rx.recv().await {
                Ok(record) => {
                    if let Some(event) = map(&record) {
                        return Some((Ok(event), (rx, map)));
                    }
                }
                Err(RecvError::Lagged(n)) => tracing::warn!(skipped = n, "event stream lagged"),
                Err(RecvError::Closed) => return None,
            }
        }
    })
}

async fn session_events(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    state.hub.phase(&id).map_err(|e| ApiError::from_hub(e, &state.hub, None))?;
    let stream = record_stream(&state.hub, move |r| {
        if r.session != id {
            return None;
        }
        let ev = teacher_event(r)?;
        let data = serde_json::to_string(&ev).ok()?;
        Some(Event::default().event("turn").id(r.seq.to_string()).data(data))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn queue_events(
    State(state): State<AppState>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    require_supervisor(&state, &headers, q.token.as_deref())?;
    let stream = record_stream(&state.hub, |r| {
        if r.kind != RecordKind::Ticket {
            return None;
        }
        let data = serde_json::to_string(r).ok()?;
        Some(Event::default().event("ticket").id(format!("{}:{}", r.session, r.seq)).data(data))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
