//! HTTP routes: experiment CRUD, design space, sessions, assets, the
//! WebSocket channel and the static client pages.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use ozwoz_core::pipeline::{enumerate_design_space, PipelineConfig};
use ozwoz_core::{ExperimentId, SessionId};

use crate::catalog::{Catalog, CatalogError};
use crate::hub::{Hub, HubError};
use crate::store::Store;
use crate::ws;

pub struct AppState {
    pub catalog: Catalog,
    pub hub: Hub,
    pub store: Store,
}

/// JSON error response.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} {id} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let message = e.to_string();
        match e {
            CatalogError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, message),
            CatalogError::Conflict { current, .. } => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({ "error": message, "current_revision": current }),
            },
            CatalogError::Pipeline(violations) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": message, "violations": violations }),
            },
            CatalogError::Invalid(problems) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": message, "problems": problems }),
            },
            CatalogError::Import { row, .. } => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": message, "row": row }),
            },
            CatalogError::Malformed(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message),
            CatalogError::Store(_) => {
                tracing::error!("{message}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage failure")
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/experiments", get(list_experiments).post(create_experiment))
        .route("/experiments/{id}", get(get_experiment).put(replace_experiment).delete(delete_experiment))
        .route("/experiments/{id}/pipeline", put(set_pipeline))
        .route("/experiments/{id}/utterances:import", post(import_utterances))
        .route("/design-space", get(design_space))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/log", get(session_log))
        .route("/sessions/{id}/channel", get(ws::channel))
        .route("/assets", post(put_asset))
        .route("/assets/{id}", get(get_asset))
        .route("/schema/messages.json", get(message_schema))
        .route("/ui/wizard", get(|| async { Html(WIZARD_PAGE) }))
        .route("/ui/participant", get(|| async { Html(PARTICIPANT_PAGE) }))
        .with_state(state)
}

const WIZARD_PAGE: &str = include_str!("../static/wizard.html");
const PARTICIPANT_PAGE: &str = include_str!("../static/participant.html");
pub const MESSAGE_SCHEMA: &str = include_str!("../../../schema/messages.json");

/// Parse a JSON body ourselves so malformed documents get a 422 with our
/// error shape rather than the extractor's plain-text rejection.
fn json_body(bytes: &Bytes) -> ApiResult<Value> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}

#[derive(Deserialize)]
struct RevisionQuery {
    revision: Option<u64>,
}

async fn list_experiments(State(app): Shared) -> Json<Value> {
    let docs: Vec<Value> = app
        .catalog
        .list()
        .iter()
        .map(|e| json!({ "id": e.id, "name": e.name, "revision": e.revision, "updated_at": e.updated_at }))
        .collect();
    Json(Value::Array(docs))
}

async fn create_experiment(State(app): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    let exp = app.catalog.create(json_body(&body)?)?;
    Ok((StatusCode::CREATED, Json(exp)))
}

async fn get_experiment(State(app): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.catalog.get(&ExperimentId::new(id))?))
}

async fn replace_experiment(State(app): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.catalog.replace(&ExperimentId::new(id), json_body(&body)?)?))
}

async fn delete_experiment(State(app): Shared, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.catalog.delete(&ExperimentId::new(id))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn set_pipeline(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<RevisionQuery>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let id = ExperimentId::new(id);
    // Unknown ids are a 404 even when the body is also bad.
    app.catalog.get(&id)?;
    let pipeline: PipelineConfig = serde_json::from_value(json_body(&body)?)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    Ok(Json(app.catalog.set_pipeline(&id, pipeline, q.revision)?))
}

async fn import_utterances(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<RevisionQuery>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let (count, exp) = app.catalog.import_csv(&ExperimentId::new(id), &body, q.revision)?;
    Ok(Json(json!({ "count": count, "revision": exp.revision })))
}

async fn design_space() -> Json<Value> {
    Json(serde_json::to_value(enumerate_design_space()).expect("serializable"))
}

#[derive(Deserialize)]
struct NewSession {
    experiment_id: ExperimentId,
}

async fn create_session(State(app): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: NewSession = serde_json::from_value(json_body(&body)?)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let exp = app.catalog.get(&req.experiment_id)?;
    let handle = app.hub.start_session(&exp).map_err(|e| match e {
        HubError::Session(e) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        HubError::Store(e) => {
            tracing::error!("{e}");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage failure")
        }
    })?;
    let id = handle.id();
    let t = handle.tokens();
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": id,
            "experiment_id": exp.id,
            "wizard_token": t.wizard,
            "participant_token": t.participant,
            "wizard_url": format!("/ui/wizard?session={id}&token={}", t.wizard),
            "participant_url": format!("/ui/participant?session={id}&token={}", t.participant),
            "channel": format!("/sessions/{id}/channel"),
        })),
    ))
}

async fn list_sessions(State(app): Shared) -> Json<Value> {
    let mut out = Vec::new();
    for handle in app.hub.list() {
        if let Some(snap) = handle.snapshot().await {
            out.push(serde_json::to_value(snap).expect("serializable"));
        }
    }
    Json(Value::Array(out))
}

async fn get_session(State(app): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let handle = app.hub.get(&SessionId::new(id.as_str())).ok_or_else(|| ApiError::not_found("session", &id))?;
    let snap = handle.snapshot().await.ok_or_else(|| ApiError::not_found("session", &id))?;
    Ok(Json(snap))
}

/// The session log as NDJSON, exactly as stored.
async fn session_log(State(app): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let handle = app.hub.get(&SessionId::new(id.as_str())).ok_or_else(|| ApiError::not_found("session", &id))?;
    let body: String = handle.log().await.iter().map(|e| e.to_json_line() + "\n").collect();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn put_asset(State(app): Shared, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty asset"));
    }
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream");
    let id = app.store.put_asset(&body, content_type).map_err(|e| {
        tracing::error!("{e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage failure")
    })?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_asset(State(app): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    match app.store.get_asset(&id) {
        Ok(Some((bytes, content_type))) => Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response()),
        Ok(None) => Err(ApiError::not_found("asset", &id)),
        Err(e) => {
            tracing::error!("{e}");
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage failure"))
        }
    }
}

async fn message_schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], MESSAGE_SCHEMA)
}
