//! Control API: JSON over HTTP, loopback only.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/threads` | thread summaries |
//! | GET | `/threads/{key}` | state and statistics |
//! | GET | `/threads/{key}/events` | event log |
//! | POST | `/threads/{key}/stop` | manual stop |
//! | GET | `/queue` | drafts awaiting approval |
//! | POST | `/drafts/{id}/approve` | schedule the draft |
//! | POST | `/drafts/{id}/edit` | replace the body, `{"body": "..."}` |
//! | POST | `/drafts/{id}/reject` | ask for a new draft |
//! | GET | `/report` | report CSV |
//! | GET | `/timeline` | timeline CSV |
//!
//! Unknown keys and ids give 404, transitions the state machine refuses
//! give 409, and edits that reintroduce personal details give 422.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::service::SharedService;
use crate::clock::Clock;
use crate::engagement::{EngagementEvent, EngineError, EventStore, StepError, TerminationReason, ThreadState};
use crate::mail::{fresh_lines, Direction};
use crate::metrics::{compute_thread_stats, export_timeline, report_from_snapshot, timeline_csv, ThreadStats};
use crate::reply::{scan_pii, PiiFinding};

pub struct ApiState<S: EventStore> {
    pub service: SharedService<S>,
    pub clock: Arc<dyn Clock>,
}

impl<S: EventStore> Clone for ApiState<S> {
    fn clone(&self) -> Self {
        ApiState {
            service: self.service.clone(),
            clock: self.clock.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadSummary {
    pub thread_key: String,
    pub status: String,
    pub termination: Option<TerminationReason>,
    pub inbound_count: u32,
    pub outbound_count: u32,
    #[serde(default, with = "crate::mail::iso_seconds::option")]
    pub first_contact_at: Option<DateTime<Utc>>,
    #[serde(default, with = "crate::mail::iso_seconds::option")]
    pub last_event_at: Option<DateTime<Utc>>,
    pub draft_id: Option<String>,
}

impl From<&ThreadState> for ThreadSummary {
    fn from(s: &ThreadState) -> Self {
        ThreadSummary {
            thread_key: s.thread_key.clone(),
            status: s.status.name().to_string(),
            termination: s.termination(),
            inbound_count: s.inbound_count,
            outbound_count: s.outbound_count,
            first_contact_at: s.first_contact_at,
            last_event_at: s.last_event_at,
            draft_id: s.draft.as_ref().map(|d| d.id.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadDetail {
    pub state: ThreadState,
    pub stats: Option<ThreadStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub draft_id: String,
    pub thread_key: String,
    /// Fresh text of the scammer's latest mail.
    pub scammer_text: String,
    pub body: String,
    pub attempts: u32,
    pub preamble_level_used: u8,
    pub refusals_seen: u32,
    /// Personal details found in the current body.
    pub findings: Vec<PiiFinding>,
    pub findings_history: Vec<Vec<PiiFinding>>,
    pub age_seconds: i64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EditRequest {
    pub body: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    findings: Vec<PiiFinding>,
}

pub struct ApiError(EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            EngineError::UnknownThread(_) | EngineError::UnknownDraft(_) => StatusCode::NOT_FOUND,
            EngineError::DraftNotPending(_) | EngineError::Step(StepError::IllegalTransition { .. }) => {
                StatusCode::CONFLICT
            }
            EngineError::PiiInEdit(_) | EngineError::EmptyDraft => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let findings = match &self.0 {
            EngineError::PiiInEdit(f) => f.clone(),
            _ => Vec::new(),
        };
        (status, Json(ErrorBody { error: self.0.to_string(), findings })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn unknown_thread(key: &str) -> ApiError {
    ApiError(EngineError::UnknownThread(key.to_string()))
}

async fn list_threads<S: EventStore + 'static>(State(st): State<ApiState<S>>) -> Json<Vec<ThreadSummary>> {
    let svc = st.service.lock().expect("service poisoned");
    Json(svc.engine().states().map(ThreadSummary::from).collect())
}

async fn thread_detail<S: EventStore + 'static>(
    State(st): State<ApiState<S>>,
    Path(key): Path<String>,
) -> ApiResult<Json<ThreadDetail>> {
    let svc = st.service.lock().expect("service poisoned");
    let state = svc.engine().state(&key).ok_or_else(|| unknown_thread(&key))?.clone();
    let thread = svc.engine().thread(&key).ok_or_else(|| unknown_thread(&key))?;
    let stats = compute_thread_stats(&thread, &state).ok();
    Ok(Json(ThreadDetail { state, stats }))
}

async fn thread_events<S: EventStore + 'static>(
    State(st): State<ApiState<S>>,
    Path(key): Path<String>,
) -> ApiResult<Json<Vec<EngagementEvent>>> {
    let svc = st.service.lock().expect("service poisoned");
    Ok(Json(svc.engine().events(&key).ok_or_else(|| unknown_thread(&key))?.to_vec()))
}

async fn stop_thread<S: EventStore + 'static>(
    State(st): State<ApiState<S>>,
    Path(key): Path<String>,
) -> ApiResult<Json<ThreadSummary>> {
    let now = st.clock.now();
    let mut svc = st.service.lock().expect("service poisoned");
    svc.stop(&key, now)?;
    Ok(Json(svc.engine().state(&key).expect("just stopped").into()))
}

async fn queue<S: EventStore + 'static>(State(st): State<ApiState<S>>) -> Json<Vec<QueueItem>> {
    let now = st.clock.now();
    let svc = st.service.lock().expect("service poisoned");
    let items = svc
        .engine()
        .queue()
        .into_iter()
        .map(|(state, draft)| {
            let scammer_text = svc
                .engine()
                .thread(&state.thread_key)
                .and_then(|t| {
                    t.messages
                        .iter()
                        .rev()
                        .find(|m| m.direction == Direction::Inbound)
                        .map(|m| fresh_lines(m.best_text()).collect::<Vec<_>>().join("\n").trim().to_string())
                })
                .unwrap_or_default();
            QueueItem {
                draft_id: draft.id.clone(),
                thread_key: state.thread_key.clone(),
                scammer_text,
                body: draft.body.clone(),
                attempts: draft.attempts,
                preamble_level_used: draft.preamble_level_used,
                refusals_seen: draft.refusals_seen,
                findings: scan_pii(&draft.body),
                findings_history: draft.findings_history.clone(),
                age_seconds: state.last_event_at.map_or(0, |at| (now - at).num_seconds().max(0)),
            }
        })
        .collect();
    Json(items)
}

fn draft_response<S: EventStore>(st: &ApiState<S>, key: &str) -> Json<ThreadSummary> {
    let svc = st.service.lock().expect("service poisoned");
    Json(svc.engine().state(key).expect("thread of a known draft").into())
}

async fn approve<S: EventStore + 'static>(
    State(st): State<ApiState<S>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ThreadSummary>> {
    let now = st.clock.now();
    let key = st.service.lock().expect("service poisoned").approve(&id, now)?;
    Ok(draft_response(&st, &key))
}

async fn edit<S: EventStore + 'static>(
    State(st): State<ApiState<S>>,
    Path(id): Path<String>,
    Json(req): Json<EditRequest>,
) -> ApiResult<Json<ThreadSummary>> {
    let now = st.clock.now();
    let key = st.service.lock().expect("service poisoned").edit(&id, &req.body, now)?;
    Ok(draft_response(&st, &key))
}

async fn reject<S: EventStore + 'static>(
    State(st): State<ApiState<S>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ThreadSummary>> {
    let now = st.clock.now();
    let key = st.service.lock().expect("service poisoned").reject(&id, now)?;
    Ok(draft_response(&st, &key))
}

fn csv(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
}

async fn report<S: EventStore + 'static>(State(st): State<ApiState<S>>) -> Response {
    let snapshot = st.service.lock().expect("service poisoned").engine().snapshot();
    csv(report_from_snapshot(&snapshot).to_csv())
}

async fn timeline<S: EventStore + 'static>(State(st): State<ApiState<S>>) -> Response {
    let snapshot = st.service.lock().expect("service poisoned").engine().snapshot();
    csv(timeline_csv(&export_timeline(&snapshot)))
}

pub fn router<S: EventStore + 'static>(state: ApiState<S>) -> Router {
    Router::new()
        .route("/threads", get(list_threads::<S>))
        .route("/threads/{key}", get(thread_detail::<S>))
        .route("/threads/{key}/events", get(thread_events::<S>))
        .route("/threads/{key}/stop", post(stop_thread::<S>))
        .route("/queue", get(queue::<S>))
        .route("/drafts/{id}/approve", post(approve::<S>))
        .route("/drafts/{id}/edit", post(edit::<S>))
        .route("/drafts/{id}/reject", post(reject::<S>))
        .route("/report", get(report::<S>))
        .route("/timeline", get(timeline::<S>))
        .with_state(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::engagement::testing::{config, t};
    use crate::engagement::{Engine, MemoryStore};
    use crate::gateway::mailbox::SimMailbox;
    use crate::gateway::service::Service;
    use crate::mail::testing::msg;
    use crate::metrics::REPORT_CSV_HEADER;
    use crate::reply::{GuardPolicy, PiiKind, TemplateGenerator};
    use axum::body::{to_bytes, Body};
    use axum::http::Request;
    use std::sync::Mutex;
    use tower::ServiceExt;

    fn app(approval: bool) -> (Router, SharedService<MemoryStore>) {
        let mut cfg = config();
        cfg.approval_required = approval;
        let engine = Engine::new(cfg, MemoryStore::default()).unwrap();
        let mb = SimMailbox::new();
        mb.deliver(msg("m1", Direction::Inbound, "Dear friend, can you help me?", 14, 9));
        let mut svc = Service::new(engine, Box::new(mb), Arc::new(TemplateGenerator::new(1)), GuardPolicy::default());
        svc.poll(t(11, 14, 9));
        svc.generate_pending(t(11, 14, 9));
        let service = Arc::new(Mutex::new(svc));
        let clock = Arc::new(VirtualClock::starting_at(t(11, 14, 12)));
        (router(ApiState { service: service.clone(), clock }), service)
    }

    async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header(header::CONTENT_TYPE, "application/json");
        }
        let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    fn json<T: serde::de::DeserializeOwned>(s: &str) -> T {
        serde_json::from_str(s).unwrap()
    }

    #[tokio::test]
    async fn reads() {
        let (app, _) = app(false);
        let (code, body) = call(&app, "GET", "/threads", None).await;
        assert_eq!(code, StatusCode::OK);
        let list: Vec<ThreadSummary> = json(&body);
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].status, "Scheduled");
        assert_eq!(list[0].first_contact_at, Some(t(11, 14, 9)));

        let (code, body) = call(&app, "GET", "/threads/kar@example.com", None).await;
        assert_eq!(code, StatusCode::OK);
        let detail: ThreadDetail = json(&body);
        assert_eq!(detail.stats.unwrap().total_mails, 1);

        let (_, body) = call(&app, "GET", "/threads/kar%40example.com/events", None).await;
        let events: Vec<EngagementEvent> = json(&body);
        assert_eq!(events[0].body.kind(), "InboundReceived");

        assert_eq!(call(&app, "GET", "/threads/nobody@x.org", None).await.0, StatusCode::NOT_FOUND);
        assert_eq!(call(&app, "GET", "/threads/nobody@x.org/events", None).await.0, StatusCode::NOT_FOUND);

        let (code, body) = call(&app, "GET", "/report", None).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(body.lines().next(), Some(REPORT_CSV_HEADER));
        assert_eq!(body.lines().count(), 2);
        let (_, body) = call(&app, "GET", "/timeline", None).await;
        assert_eq!(body, "thread_key,day_offset,direction\nkar@example.com,0.0,Inbound\n");
    }

    #[tokio::test]
    async fn review_flow() {
        let (app, service) = app(true);
        let (_, body) = call(&app, "GET", "/queue", None).await;
        let queue: Vec<QueueItem> = json(&body);
        assert_eq!(queue.len(), 1);
        let item = &queue[0];
        assert_eq!(item.scammer_text, "Dear friend, can you help me?");
        assert!(item.findings.is_empty());
        assert_eq!(item.age_seconds, 3 * 3600);
        let id = item.draft_id.clone();

        let (code, body) = call(
            &app,
            "POST",
            &format!("/drafts/{id}/edit"),
            Some(r#"{"body": "call me at +1 555 123 4567"}"#),
        )
        .await;
        assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
        let err: serde_json::Value = json(&body);
        assert_eq!(err["findings"][0]["kind"], serde_json::json!(PiiKind::PhoneNumber));

        let (code, _) = call(&app, "POST", &format!("/drafts/{id}/edit"), Some(r#"{"body": "Tell me more."}"#)).await;
        assert_eq!(code, StatusCode::OK);
        let (code, body) = call(&app, "POST", &format!("/drafts/{id}/approve"), None).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(json::<ThreadSummary>(&body).status, "Scheduled");
        let (_, body) = call(&app, "GET", "/threads/kar@example.com", None).await;
        assert_eq!(json::<ThreadDetail>(&body).state.status.name(), "Scheduled");
        assert_eq!(call(&app, "POST", &format!("/drafts/{id}/approve"), None).await.0, StatusCode::CONFLICT);
        assert_eq!(call(&app, "POST", "/drafts/nope/approve", None).await.0, StatusCode::NOT_FOUND);
        assert_eq!(call(&app, "POST", "/drafts/nope/reject", None).await.0, StatusCode::NOT_FOUND);

        let (code, body) = call(&app, "POST", "/threads/kar@example.com/stop", None).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(json::<ThreadSummary>(&body).termination, Some(TerminationReason::ManualStop));
        assert_eq!(call(&app, "POST", "/threads/kar@example.com/stop", None).await.0, StatusCode::CONFLICT);
        assert_eq!(call(&app, "POST", "/threads/x@y.z/stop", None).await.0, StatusCode::NOT_FOUND);
        assert!(service.lock().unwrap().timers().is_empty());
    }

    #[tokio::test]
    async fn reject_regenerates() {
        let (app, service) = app(true);
        let (_, body) = call(&app, "GET", "/queue", None).await;
        let id = json::<Vec<QueueItem>>(&body)[0].draft_id.clone();
        let (code, body) = call(&app, "POST", &format!("/drafts/{id}/reject"), None).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(json::<ThreadSummary>(&body).status, "DraftPending");
        service.lock().unwrap().generate_pending(t(11, 14, 12));
        let (_, body) = call(&app, "GET", "/queue", None).await;
        let queue: Vec<QueueItem> = json(&body);
        assert_eq!(queue.len(), 1);
        assert_ne!(queue[0].draft_id, id);
        assert_eq!(call(&app, "POST", "/drafts/x/edit", Some(r#"{"body": "  "}"#)).await.0, StatusCode::NOT_FOUND);
        let new_id = &queue[0].draft_id;
        assert_eq!(
            call(&app, "POST", &format!("/drafts/{new_id}/edit"), Some(r#"{"body": "  "}"#)).await.0,
            StatusCode::UNPROCESSABLE_ENTITY
        );
    }
}
