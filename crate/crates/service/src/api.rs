use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use scribe_core::catalog::{ColumnAsset, TableKey};
use scribe_core::embedding::EmbeddingProvider;
use scribe_core::eval::EvalReport;
use scribe_core::gateway::{Clock, GenerateError, SystemClock};
use scribe_core::pipeline::{Engine, PipelineError};
use scribe_core::review::{ReviewDecision, ReviewLabel};

use crate::store::{DecideError, ListQuery, NewItem, ReviewItem, ReviewStore};

#[derive(Clone)]
pub struct AppState {
    pub engine: Option<Arc<Engine>>,
    pub store: Arc<ReviewStore>,
    /// Scores decisions; None skips embedding similarity.
    pub embedder: Option<Arc<dyn EmbeddingProvider>>,
    pub clock: Arc<dyn Clock>,
    pub bearer_token: Option<String>,
}

impl AppState {
    pub fn new(engine: Option<Arc<Engine>>, store: Arc<ReviewStore>) -> Self {
        let embedder = engine.as_ref().map(|e| e.embedder.clone());
        Self {
            engine,
            store,
            embedder,
            clock: Arc::new(SystemClock),
            bearer_token: None,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.to_string(),
                message: message.to_string(),
                attempts: None,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let (status, code) = match &e {
            PipelineError::UnknownColumn(_) | PipelineError::UnknownTable(_) => (StatusCode::NOT_FOUND, "not_found"),
            PipelineError::EmptyTable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "nothing_to_describe"),
            PipelineError::Expand(_) | PipelineError::Prompt(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_asset"),
            PipelineError::Retrieval(_) => (StatusCode::INTERNAL_SERVER_ERROR, "retrieval_failed"),
            PipelineError::Generate(GenerateError::Config(_)) => (StatusCode::INTERNAL_SERVER_ERROR, "provider_config"),
            PipelineError::Generate(_) => (StatusCode::BAD_GATEWAY, "provider_failed"),
        };
        let mut err = ApiError::new(status, code, &e);
        if let PipelineError::Generate(g) = &e {
            err.body.attempts = g.attempts();
        }
        err
    }
}

impl From<DecideError> for ApiError {
    fn from(e: DecideError) -> Self {
        let (status, code) = match &e {
            DecideError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            DecideError::AlreadyDecided { .. } => (StatusCode::CONFLICT, "already_decided"),
            DecideError::VersionConflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
            DecideError::Invalid(_) | DecideError::Eval(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision"),
            DecideError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, &e)
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e))
}

fn engine(state: &AppState) -> Result<Arc<Engine>, ApiError> {
    state.engine.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "not_configured",
            "no catalog is loaded; generation is unavailable",
        )
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
}

fn storage(e: crate::store::StoreError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e)
}

/// A bare key (only the three key fields) is resolved against the catalog;
/// a fuller asset is described as given.
async fn describe_column(State(state): State<AppState>, body: Bytes) -> Result<Json<ReviewItem>, ApiError> {
    let asset: ColumnAsset = parse(&body)?;
    let engine = engine(&state)?;
    blocking(move || {
        let pipeline = engine.pipeline()?;
        let key = asset.key();
        let bare = asset == ColumnAsset::new(&key.column_name, &key.table_name, &key.data_source);
        let run = if bare {
            pipeline.describe_column_key(&key)?
        } else {
            pipeline.describe_column(&asset)?
        };
        let created_at = run.generation.created_at;
        state.store.insert(NewItem::from(run), created_at).map_err(storage)
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Deserialize)]
pub struct TableRequest {
    pub table_name: String,
    pub data_source: String,
    #[serde(default)]
    pub business_context: Option<String>,
}

async fn describe_table(State(state): State<AppState>, body: Bytes) -> Result<Json<ReviewItem>, ApiError> {
    let req: TableRequest = parse(&body)?;
    let engine = engine(&state)?;
    blocking(move || {
        let key = TableKey::new(req.table_name, req.data_source);
        let run = engine.pipeline()?.describe_table(&key, req.business_context.as_deref())?;
        let created_at = run.generation.created_at;
        state.store.insert(NewItem::from(run), created_at).map_err(storage)
    })
    .await
    .map(Json)
}

async fn list_reviews(
    State(state): State<AppState>,
    query: Result<Query<ListQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Vec<ReviewItem>>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_query", e))?;
    Ok(Json(state.store.list(q)))
}

async fn get_review(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ReviewItem>, ApiError> {
    state
        .store
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no review item {id}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub final_text: String,
    pub label: ReviewLabel,
    pub steward_id: String,
    pub expected_version: u64,
    /// Defaults to the server clock.
    #[serde(default)]
    pub decided_at: Option<DateTime<Utc>>,
}

async fn decide(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ReviewItem>, ApiError> {
    let req: DecisionRequest = parse(&body)?;
    blocking(move || {
        let decision = ReviewDecision {
            final_text: req.final_text,
            label: req.label,
            steward_id: req.steward_id,
            decided_at: req.decided_at.unwrap_or_else(|| state.clock.now()),
        };
        Ok(state
            .store
            .decide(&id, req.expected_version, decision, state.embedder.as_deref())?)
    })
    .await
    .map(Json)
}

async fn metrics(State(state): State<AppState>) -> Json<EvalReport> {
    Json(state.store.metrics())
}

/// Feedback records of decided items as JSONL, for offline evaluation.
async fn export_feedback(State(state): State<AppState>) -> Response {
    let mut out = String::new();
    for r in state.store.feedback() {
        out.push_str(&serde_json::to_string(&r).expect("feedback serializes"));
        out.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response()
}

async fn require_bearer(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = state.bearer_token.as_deref() else {
        return next.run(req).await;
    };
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token) {
        return next.run(req).await;
    }
    let mut resp = ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
    resp.headers_mut()
        .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
    resp
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/columns/describe", post(describe_column))
        .route("/v1/tables/describe", post(describe_table))
        .route("/v1/reviews", get(list_reviews))
        .route("/v1/reviews/{id}", get(get_review))
        .route("/v1/reviews/{id}/decision", post(decide))
        .route("/v1/metrics", get(metrics))
        .route("/v1/export/feedback", get(export_feedback))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_bearer))
        .with_state(state)
}
