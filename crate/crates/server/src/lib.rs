//! HTTP API over one run directory: the review queue, the report and the
//! open-set taxonomy.
//!
//! Every mutation goes through the run's [`RunSession`], which writes the
//! event before applying it, so a restarted server replays to the same
//! state.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mchr_core::consensus::ReviewReason;
use mchr_core::metrics;
use mchr_core::review::{list_cases, AnnotationRecord, CaseQuery, CaseStatus, CurationError, QcAudit, ReviewError};
use mchr_core::store::RunSession;
use mchr_core::taxonomy::{SparsityStats, TaxonomyError, TaxonomyExport};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8080;
/// Reviewer name used when a decision body leaves `reviewer` empty.
pub const REVIEWER_HEADER: &str = "x-reviewer-name";

/// Non-success response body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub error_code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), error_code: code.into(), message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let msg = e.to_string();
        match e {
            ReviewError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", msg),
            ReviewError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "already_decided", msg),
            ReviewError::Validation(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_label", msg),
            ReviewError::BadCursor(_) => ApiError::new(StatusCode::BAD_REQUEST, "bad_cursor", msg),
            ReviewError::Precondition(_) => ApiError::new(StatusCode::CONFLICT, "precondition_failed", msg),
            ReviewError::Store(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", msg),
        }
    }
}

impl From<CurationError> for ApiError {
    fn from(e: CurationError) -> Self {
        let msg = e.to_string();
        match e {
            CurationError::Taxonomy(t) => match t {
                TaxonomyError::NotFound(_) => ApiError::new(StatusCode::CONFLICT, "unknown_category", msg),
                TaxonomyError::SelfMerge(_) => ApiError::new(StatusCode::CONFLICT, "self_merge", msg),
                TaxonomyError::ClosedTask => ApiError::new(StatusCode::CONFLICT, "closed_task", msg),
                TaxonomyError::InvalidLabel | TaxonomyError::LabelOutOfSpace(_) => {
                    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_label", msg)
                }
            },
            CurationError::Store(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", msg),
        }
    }
}

fn bad_body(e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_body", e.body_text())
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Allowed browser origin; `*` allows any. No CORS headers when unset.
    pub cors_origin: Option<String>,
    /// Static UI assets served at `/`.
    pub ui_dir: Option<PathBuf>,
}

pub type SharedSession = Arc<Mutex<RunSession>>;

pub fn shared(session: RunSession) -> SharedSession {
    Arc::new(Mutex::new(session))
}

pub fn router(session: RunSession, config: &ServerConfig) -> Router {
    router_shared(shared(session), config)
}

pub fn router_shared(session: SharedSession, config: &ServerConfig) -> Router {
    let api = Router::new()
        .route("/api/cases", get(list))
        .route("/api/cases/{id}", get(case))
        .route("/api/cases/{id}/decision", post(decide))
        .route("/api/report", get(report))
        .route("/api/taxonomy", get(taxonomy))
        .route("/api/taxonomy/merge", post(merge))
        .route("/api/{*rest}", axum::routing::any(api_not_found))
        .with_state(session);
    let app = match &config.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no UI is served") }),
    };
    match config.cors_origin.as_deref() {
        None => app,
        Some("*") => app.layer(CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any)),
        Some(origin) => {
            let origin = HeaderValue::from_str(origin).unwrap_or(HeaderValue::from_static("null"));
            app.layer(
                CorsLayer::new()
                    .allow_origin(AllowOrigin::exact(origin))
                    .allow_methods(Any)
                    .allow_headers(Any),
            )
        }
    }
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn case_query(params: &HashMap<String, String>) -> Result<CaseQuery, ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_filter", m);
    let nonempty = |k: &str| params.get(k).map(String::as_str).filter(|v| !v.is_empty());
    let status = nonempty("status")
        .map(|s| CaseStatus::parse(s).ok_or_else(|| bad(format!("unknown status {s:?}"))))
        .transpose()?;
    let reason = nonempty("reason")
        .map(|s| ReviewReason::parse(s).ok_or_else(|| bad(format!("unknown reason {s:?}"))))
        .transpose()?;
    let limit = nonempty("limit")
        .map(|s| s.parse::<usize>().map_err(|_| bad(format!("limit {s:?} is not a number"))))
        .transpose()?;
    if let Some(unknown) = params.keys().find(|k| !["status", "reason", "limit", "cursor"].contains(&k.as_str())) {
        return Err(bad(format!("unknown parameter {unknown:?}")));
    }
    Ok(CaseQuery { status, reason, limit, cursor: nonempty("cursor").map(str::to_string) })
}

async fn list(
    State(session): State<SharedSession>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<impl IntoResponse, ApiError> {
    let query = case_query(&params)?;
    let session = session.lock();
    let page = list_cases(session.state().cases(), &query).map_err(|e| match e {
        ReviewError::Validation(m) => ApiError::new(StatusCode::BAD_REQUEST, "bad_filter", m),
        other => other.into(),
    })?;
    Ok(Json(page))
}

async fn case(State(session): State<SharedSession>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = session.lock();
    let case = session.state().case(&id).ok_or(ReviewError::NotFound(id))?;
    Ok(Json(case.payload()))
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    label: String,
    #[serde(default)]
    reviewer: String,
    #[serde(default)]
    rationale: String,
}

#[derive(Debug, Serialize)]
struct DecisionResponse {
    #[serde(flatten)]
    record: AnnotationRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<QcAudit>,
}

async fn decide(
    State(session): State<SharedSession>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body.map_err(bad_body)?;
    let reviewer = if body.reviewer.trim().is_empty() {
        headers
            .get(REVIEWER_HEADER)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("anonymous")
            .to_string()
    } else {
        body.reviewer
    };
    let outcome = session.lock().apply_decision(&id, &body.label, &reviewer, &body.rationale)?;
    Ok(Json(DecisionResponse { record: outcome.record, audit: outcome.audit }))
}

async fn report(State(session): State<SharedSession>) -> Result<impl IntoResponse, ApiError> {
    let session = session.lock();
    let report = metrics::build_report_partial(&[session.state()])
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "report_error", e.to_string()))?;
    Ok(Json(report))
}

#[derive(Debug, Serialize)]
struct TaxonomyResponse {
    open: bool,
    #[serde(flatten)]
    export: TaxonomyExport,
    sparsity: Option<SparsityStats>,
}

fn taxonomy_response(session: &RunSession) -> TaxonomyResponse {
    let state = session.state();
    TaxonomyResponse {
        open: state.task().is_some_and(|t| t.labels.is_open()),
        export: state.taxonomy.export(),
        sparsity: state.taxonomy.sparsity_stats(),
    }
}

async fn taxonomy(State(session): State<SharedSession>) -> impl IntoResponse {
    Json(taxonomy_response(&session.lock()))
}

#[derive(Debug, Deserialize)]
struct MergeBody {
    from: String,
    into: String,
    #[serde(default)]
    actor: String,
}

async fn merge(
    State(session): State<SharedSession>,
    headers: HeaderMap,
    body: Result<Json<MergeBody>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body.map_err(bad_body)?;
    let actor = if body.actor.trim().is_empty() {
        headers.get(REVIEWER_HEADER).and_then(|v| v.to_str().ok()).unwrap_or("anonymous").to_string()
    } else {
        body.actor
    };
    let mut session = session.lock();
    session.merge_categories(&body.from, &body.into, &actor)?;
    Ok(Json(taxonomy_response(&session)))
}
