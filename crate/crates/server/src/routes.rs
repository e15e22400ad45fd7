use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use genlarp_core::agent::{ActionKind, AgentAction};
use genlarp_core::event::{BranchId, EventRecord};
use genlarp_core::layout::LayoutError;
use genlarp_core::runtime::PacingState;
use genlarp_core::schema::parse_world_spec;
use genlarp_core::store::{SessionDescriptor, SessionSource};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::public::public_state;
use crate::worker::{Op, Outcome, SessionHandle};
use crate::App;

type AppState = State<Arc<App>>;

const DEFAULT_PAGE: usize = 500;
const MAX_PAGE: usize = 5000;

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(describe))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/actions", post(act))
        .route("/sessions/{id}/role", post(switch_role))
        .route("/sessions/{id}/rewind", post(rewind))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/layout", get(layout))
        .route("/sessions/{id}/stream", get(stream))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such route") })
        .with_state(app)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

async fn handle(app: &Arc<App>, id: String) -> Result<Arc<SessionHandle>, ApiError> {
    let app = app.clone();
    blocking(move || app.session(&id)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    story_text: Option<String>,
    world_spec: Option<Value>,
    seed: Option<u64>,
}

async fn create_session(
    State(app): AppState,
    body: Result<Json<CreateBody>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionDescriptor>), ApiError> {
    let Json(body) = body?;
    let world = body.world_spec.map(|v| parse_world_spec(&v.to_string())).transpose()?;
    let source = SessionSource::from_parts(body.story_text, world)?;
    let seed = app.pick_seed(body.seed);
    let app2 = app.clone();
    let session = blocking(move || Ok(app2.store().create_session(source, seed, app2.provider().as_ref())?)).await?;
    let descriptor = session.descriptor();
    app.register(session);
    Ok((StatusCode::CREATED, Json(descriptor)))
}

#[derive(Debug, Serialize)]
struct Described {
    #[serde(flatten)]
    descriptor: SessionDescriptor,
    pacing: PacingState,
    state_hash: String,
}

async fn describe(State(app): AppState, Path(id): Path<String>) -> Result<Json<Described>, ApiError> {
    let view = handle(&app, id).await?.view();
    Ok(Json(Described {
        descriptor: view.descriptor.clone(),
        pacing: view.session.state().pacing.clone(),
        state_hash: view.session.state_hash(),
    }))
}

async fn state(State(app): AppState, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let view = handle(&app, id).await?.view();
    let mut body = public_state(view.session.state());
    body["session_id"] = json!(view.descriptor.session_id);
    body["active_branch"] = json!(view.descriptor.active_branch);
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionBody {
    kind: String,
    target: Option<String>,
    content: Option<String>,
}

async fn act(
    State(app): AppState,
    Path(id): Path<String>,
    body: Result<Json<ActionBody>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(body) = body?;
    let kind: ActionKind = body
        .kind
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_ACTION", e))?;
    let action = AgentAction::new(kind, body.target.as_deref(), body.content.as_deref());
    match handle(&app, id).await?.submit(Op::Act(action)).await? {
        Outcome::Events(events) => Ok(Json(json!({"events": events}))),
        other => Err(ApiError::internal(format!("unexpected outcome {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleBody {
    character_id: String,
}

async fn switch_role(
    State(app): AppState,
    Path(id): Path<String>,
    body: Result<Json<RoleBody>, JsonRejection>,
) -> Result<Json<SessionDescriptor>, ApiError> {
    let Json(body) = body?;
    match handle(&app, id).await?.submit(Op::Role(body.character_id)).await? {
        Outcome::Descriptor(d) => Ok(Json(d)),
        other => Err(ApiError::internal(format!("unexpected outcome {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewindBody {
    node_id: String,
}

async fn rewind(
    State(app): AppState,
    Path(id): Path<String>,
    body: Result<Json<RewindBody>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(body) = body?;
    match handle(&app, id).await?.submit(Op::Rewind(body.node_id)).await? {
        Outcome::Branch(b) => Ok(Json(json!({"new_branch_id": b}))),
        other => Err(ApiError::internal(format!("unexpected outcome {other:?}"))),
    }
}

async fn graph(State(app): AppState, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let view = handle(&app, id).await?.view();
    Ok(Json(serde_json::to_value(view.session.story()).expect("graph serializes")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsQuery {
    branch: Option<BranchId>,
    since_seq: Option<u64>,
    limit: Option<usize>,
}

fn unknown_branch(branch: BranchId) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_BRANCH", format!("unknown branch {branch}"))
        .with_detail(json!({"branch": branch}))
}

/// Events on the path from the root to `branch`, oldest first, with
/// `seq > since_seq`.
async fn events(
    State(app): AppState,
    Path(id): Path<String>,
    query: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(q) = query?;
    let view = handle(&app, id).await?.view();
    let branch = q.branch.unwrap_or(view.descriptor.active_branch);
    if !view.session.story().branches.contains_key(&branch) {
        return Err(unknown_branch(branch));
    }
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let mut page: Vec<&EventRecord> = view
        .session
        .path_events(branch)
        .into_iter()
        .filter(|e| q.since_seq.is_none_or(|s| e.seq > s))
        .take(limit + 1)
        .collect();
    let has_more = page.len() > limit;
    page.truncate(limit);
    Ok(Json(json!({"branch": branch, "events": page, "has_more": has_more})))
}

async fn layout(State(app): AppState, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = handle(&app, id).await?;
    match h.layout() {
        Ok(l) => Ok(Json(l).into_response()),
        Err(e @ LayoutError::Unsatisfiable) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "LAYOUT_UNSAT", e.to_string())),
        Err(e @ LayoutError::GridTooSmall { .. }) => {
            Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "GRID_TOO_SMALL", e.to_string()))
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamQuery {
    branch: Option<BranchId>,
    since_seq: Option<u64>,
}

fn ndjson_line(e: &EventRecord) -> String {
    let mut s = serde_json::to_string(e).expect("event serializes");
    s.push('\n');
    s
}

/// Backlog of the branch path after `since_seq`, then every newly committed
/// event on any branch. A subscriber that falls too far behind is
/// disconnected and resumes with `since_seq`.
async fn stream(
    State(app): AppState,
    Path(id): Path<String>,
    query: Result<Query<StreamQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let h = handle(&app, id).await?;
    // subscribe before reading the view so nothing falls between the two
    let rx = h.subscribe();
    let view = h.view();
    let branch = q.branch.unwrap_or(view.descriptor.active_branch);
    if !view.session.story().branches.contains_key(&branch) {
        return Err(unknown_branch(branch));
    }
    let mut last: BTreeMap<BranchId, u64> = BTreeMap::new();
    let mut backlog = Vec::new();
    for e in view.session.path_events(branch) {
        last.insert(e.branch_id, e.seq);
        if q.since_seq.is_none_or(|s| e.seq > s) {
            backlog.push(ndjson_line(e));
        }
    }
    let live = futures::stream::unfold((rx, last), |(mut rx, mut last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) => {
                    if last.get(&e.branch_id).is_some_and(|s| e.seq <= *s) {
                        continue;
                    }
                    last.insert(e.branch_id, e.seq);
                    return Some((ndjson_line(&e), (rx, last)));
                }
                Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => return None,
            }
        }
    });
    let body = Body::from_stream(futures::stream::iter(backlog).chain(live).map(Ok::<_, Infallible>));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
