//! JSON-over-HTTP API under `/api/v1`.

use std::sync::{Arc, Mutex, RwLock};

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::model::column::BASE_TRANSFORM;
use crate::model::dsl::{parse_predicate, DslError};
use crate::model::objects::{BehavioralTest, Comparator, Report, ReportEntry, Slice};
use crate::model::predicate::FilterPredicate;
use crate::pipeline::Progress;
use crate::query::{CrossFilterState, QueryError};

use super::config::ProjectConfig;
use super::project::{self, Processed, ProjectError};
use super::store::{Store, StoreError};

pub const API_PREFIX: &str = "/api/v1";
pub const DEFAULT_PAGE: usize = 50;

#[derive(Debug, Clone)]
pub enum Phase {
    Processing,
    Ready(Arc<Processed>),
    Failed(String),
}

/// Shared server state: config, the persistence writer and the processed
/// project once the pipeline is done.
#[derive(Debug)]
pub struct AppState {
    pub config: ProjectConfig,
    store: Mutex<Store>,
    phase: RwLock<Phase>,
    progress: Arc<Progress>,
}

impl AppState {
    pub fn new(config: ProjectConfig) -> Result<Arc<Self>, ProjectError> {
        let store = Store::open(config.state_dir())?;
        Ok(Arc::new(AppState {
            config,
            store: Mutex::new(store),
            phase: RwLock::new(Phase::Processing),
            progress: Arc::new(Progress::default()),
        }))
    }

    pub fn progress(&self) -> Arc<Progress> {
        Arc::clone(&self.progress)
    }

    pub fn phase(&self) -> Phase {
        self.phase.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set_phase(&self, phase: Phase) {
        *self.phase.write().unwrap_or_else(|e| e.into_inner()) = phase;
    }

    /// Runs the pipeline on a background thread and publishes the result.
    pub fn start_processing(self: &Arc<Self>) -> std::thread::JoinHandle<()> {
        let state = Arc::clone(self);
        std::thread::spawn(move || {
            let phase = match project::process(&state.config, Some(state.progress())) {
                Ok(p) => {
                    tracing::info!("{}", p.report.summary());
                    Phase::Ready(Arc::new(p))
                }
                Err(e) => {
                    tracing::error!(error = %e, "processing failed");
                    Phase::Failed(e.to_string())
                }
            };
            state.set_phase(phase);
        })
    }

    fn store(&self) -> std::sync::MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn ready(&self) -> Result<Arc<Processed>, ApiError> {
        match self.phase() {
            Phase::Ready(p) => Ok(p),
            Phase::Processing => {
                let (settled, total) = self.progress.snapshot();
                Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "processing", "the pipeline is still running")
                    .with("progress", json!({ "settled": settled, "total": total })))
            }
            Phase::Failed(message) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "processing_failed", message)),
        }
    }
}

/// Error body: `{"error": {"code": ..., "message": ..., ...details}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Map<String, serde_json::Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        let mut body = serde_json::Map::new();
        body.insert("code".into(), code.into());
        body.insert("message".into(), message.into().into());
        ApiError { status, body }
    }

    fn with(mut self, key: &str, value: serde_json::Value) -> Self {
        self.body.insert(key.into(), value);
        self
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.body }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request("invalid_body", e.body_text())
    }
}

impl From<DslError> for ApiError {
    fn from(e: DslError) -> Self {
        let mut err = ApiError::bad_request("invalid_predicate", e.to_string());
        if let Some(p) = e.position() {
            err = err.with("position", p.into());
        }
        if let DslError::Invalid(errors) = &e {
            err = err.with("errors", json!(errors.iter().map(ToString::to_string).collect::<Vec<_>>()));
        }
        err
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let code = match &e {
            QueryError::UnknownColumn(_) => "unknown_column",
            QueryError::UnknownTransform(_) => "unknown_transform",
            QueryError::UnknownMetric(_) => "unknown_metric",
            QueryError::InvalidPredicate(_) => "invalid_predicate",
            QueryError::InvalidSelection { .. } => "invalid_selection",
            QueryError::LimitTooLarge(_) => "limit_too_large",
            QueryError::ModelRequired => "model_required",
            QueryError::NoLabelColumn => "no_label_column",
            QueryError::NotProcessed { .. } => "not_processed",
            QueryError::Metric(_) | QueryError::Internal(_) => "internal",
        };
        let status = match &e {
            QueryError::NotProcessed { .. } => StatusCode::NOT_FOUND,
            QueryError::Metric(_) | QueryError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let mut err = ApiError::new(status, code, e.to_string());
        if let QueryError::InvalidPredicate(errors) = &e {
            err = err.with("errors", json!(errors.iter().map(ToString::to_string).collect::<Vec<_>>()));
        }
        err
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            StoreError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            StoreError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
            StoreError::Io { .. } | StoreError::Format { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        match e {
            ProjectError::Store(e) => e.into(),
            ProjectError::Query(e) => e.into(),
            ProjectError::Reference(m) => ApiError::bad_request("invalid_reference", m),
            e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

/// Runs a blocking query against the processed project.
async fn blocking<T: Send + 'static>(
    state: &Arc<AppState>,
    f: impl FnOnce(&AppState, &Processed) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let ready = state.ready()?;
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&state, &ready))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub fn router(state: Arc<AppState>) -> Router {
    let data = ServeDir::new(&state.config.data_root);
    let api = Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/histograms", get(histograms_default).post(histograms))
        .route("/instances", axum::routing::post(instances))
        .route("/metric", axum::routing::post(metric))
        .route("/slices", get(list_slices).post(create_slice))
        .route("/slices/{id}", get(get_slice).delete(delete_slice))
        .route("/folders", get(list_folders).post(create_folder))
        .route("/folders/{name}", axum::routing::delete(delete_folder))
        .route("/reports", get(list_reports).post(create_report))
        .route("/reports/{id}", get(get_report).put(update_report).delete(delete_report))
        .route("/tests", get(list_tests).post(create_test))
        .route("/tests/{id}", axum::routing::delete(delete_test))
        .route("/series", get(series))
        .route("/testresults", get(test_results))
        .route("/export/{report}", get(export))
        .nest_service("/data", data)
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state);
    Router::new().nest(API_PREFIX, api)
}

async fn health(State(state): Shared) -> Json<serde_json::Value> {
    let (settled, total) = state.progress.snapshot();
    let (phase, error) = match state.phase() {
        Phase::Processing => ("processing", None),
        Phase::Ready(_) => ("ready", None),
        Phase::Failed(m) => ("failed", Some(m)),
    };
    let mut body = json!({ "status": "ok", "state": phase, "progress": { "settled": settled, "total": total } });
    if let Some(e) = error {
        body["error"] = e.into();
    }
    Json(body)
}

async fn schema(State(state): Shared) -> ApiResult<Json<serde_json::Value>> {
    let ready = state.ready()?;
    let table = ready.engine.table();
    let mut transforms = vec![BASE_TRANSFORM.to_string()];
    transforms.extend(state.config.transforms.iter().cloned());
    Ok(Json(json!({
        "columns": table.schema(),
        "models": state.config.model_ids(),
        "transforms": transforms,
        "metrics": ready.engine.metrics().ids().collect::<Vec<_>>(),
        "view": state.config.view,
        "id_column": table.id_column(),
        "label_column": table.label_column(),
        "data_file_column": table.data_column(),
        "total_rows": table.base_row_count(),
        "thresholds": state.config.thresholds,
    })))
}

async fn histograms_default(State(state): Shared) -> ApiResult<Response> {
    blocking(&state, |_, p| Ok(Json(p.engine.histograms(&CrossFilterState::new())?).into_response())).await
}

async fn histograms(State(state): Shared, body: Result<Json<CrossFilterState>, JsonRejection>) -> ApiResult<Response> {
    let Json(cf) = body?;
    blocking(&state, move |_, p| Ok(Json(p.engine.histograms(&cf)?).into_response())).await
}

#[derive(Deserialize)]
struct InstancesRequest {
    #[serde(default)]
    state: CrossFilterState,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

async fn instances(State(state): Shared, body: Result<Json<InstancesRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    blocking(&state, move |_, p| {
        Ok(Json(p.engine.page_instances(&req.state, req.offset, req.limit.unwrap_or(DEFAULT_PAGE))?).into_response())
    })
    .await
}

#[derive(Deserialize)]
struct MetricRequest {
    #[serde(default)]
    state: CrossFilterState,
}

/// Metric over the current cross-filter selection.
async fn metric(State(state): Shared, body: Result<Json<MetricRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    blocking(&state, move |_, p| {
        let cf = req.state;
        let metric = match &cf.metric_id {
            Some(m) => m.clone(),
            None => p.engine.metrics().ids().next().ok_or(QueryError::UnknownMetric(String::new()))?.to_string(),
        };
        let predicate = cf.predicate(&p.engine.table().schema())?;
        let record = p.engine.metric("current", &predicate, cf.model_id.as_deref(), &cf.transform_id, &metric)?;
        Ok(Json(record).into_response())
    })
    .await
}

async fn list_slices(State(state): Shared) -> Json<Vec<Slice>> {
    Json(state.store().slices().to_vec())
}

/// A predicate as DSL text or as a JSON tree.
#[derive(Deserialize)]
#[serde(untagged)]
enum PredicateInput {
    Text(String),
    Tree(FilterPredicate),
}

#[derive(Deserialize)]
struct SliceRequest {
    name: String,
    predicate: PredicateInput,
    #[serde(default)]
    folder: Option<String>,
}

async fn create_slice(State(state): Shared, body: Result<Json<SliceRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let ready = state.ready()?;
    let schema = ready.engine.table().schema();
    let predicate = match req.predicate {
        PredicateInput::Text(text) => parse_predicate(&text, &schema)?,
        PredicateInput::Tree(tree) => {
            tree.validate(&schema).map_err(QueryError::InvalidPredicate)?;
            tree
        }
    };
    let slice = state.store().create_slice(Slice::new(req.name, predicate, req.folder))?;
    Ok((StatusCode::CREATED, Json(slice)).into_response())
}

async fn get_slice(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Slice>> {
    Ok(Json(state.store().slice(&id)?.clone()))
}

async fn delete_slice(State(state): Shared, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.store().delete_slice(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_folders(State(state): Shared) -> Json<Vec<String>> {
    Json(state.store().folders().to_vec())
}

#[derive(Deserialize)]
struct FolderRequest {
    name: String,
}

async fn create_folder(State(state): Shared, body: Result<Json<FolderRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    state.store().create_folder(&req.name)?;
    Ok((StatusCode::CREATED, Json(json!({ "name": req.name }))).into_response())
}

async fn delete_folder(State(state): Shared, Path(name): Path<String>) -> ApiResult<StatusCode> {
    state.store().delete_folder(&name)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct TestSpec {
    comparator: Comparator,
    threshold: f64,
}

#[derive(Deserialize)]
struct EntryRequest {
    slice_id: String,
    metric_id: String,
    #[serde(default)]
    transform_id: Option<String>,
    #[serde(default)]
    test: Option<TestSpec>,
}

#[derive(Deserialize)]
struct ReportRequest {
    name: String,
    #[serde(default)]
    entries: Vec<EntryRequest>,
}

impl ReportRequest {
    /// Builds report entries, keeping the ids of tests that already exist in `previous`.
    fn into_report(self, report_id: Option<String>, previous: Option<&Report>, config: &ProjectConfig) -> ApiResult<Report> {
        let mut report = Report::new(self.name);
        if let Some(id) = report_id {
            report.report_id = id;
        }
        for (i, e) in self.entries.into_iter().enumerate() {
            project::check_metric_transform(&e.metric_id, e.transform_id.as_deref(), config)
                .map_err(|m| ApiError::bad_request("invalid_reference", m))?;
            let test = e.test.map(|t| {
                let mut test = BehavioralTest::new(&e.slice_id, &e.metric_id, e.transform_id.clone(), t.comparator, t.threshold);
                if let Some(old) = previous.and_then(|p| p.entries.get(i)).and_then(|pe| pe.test.as_ref()) {
                    test.test_id = old.test_id.clone();
                }
                test
            });
            report.entries.push(ReportEntry { slice_id: e.slice_id, metric_id: e.metric_id, transform_id: e.transform_id, test });
        }
        Ok(report)
    }
}

async fn list_reports(State(state): Shared) -> Json<Vec<Report>> {
    Json(state.store().reports().to_vec())
}

async fn create_report(State(state): Shared, body: Result<Json<ReportRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let report = req.into_report(None, None, &state.config)?;
    let report = state.store().create_report(report)?;
    Ok((StatusCode::CREATED, Json(report)).into_response())
}

async fn get_report(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Report>> {
    Ok(Json(state.store().report(&id)?.clone()))
}

async fn update_report(
    State(state): Shared,
    Path(id): Path<String>,
    body: Result<Json<ReportRequest>, JsonRejection>,
) -> ApiResult<Json<Report>> {
    let Json(req) = body?;
    let mut store = state.store();
    let previous = store.reports().iter().find(|r| r.report_id == id).cloned();
    if previous.is_none() {
        return Err(StoreError::NotFound { kind: "report", id }.into());
    }
    let report = req.into_report(Some(id), previous.as_ref(), &state.config)?;
    Ok(Json(store.update_report(report)?))
}

async fn delete_report(State(state): Shared, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.store().delete_report(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_tests(State(state): Shared) -> Json<Vec<BehavioralTest>> {
    Json(state.store().all_tests())
}

#[derive(Deserialize)]
struct TestRequest {
    slice_id: String,
    metric_id: String,
    #[serde(default)]
    transform_id: Option<String>,
    comparator: Comparator,
    threshold: f64,
}

async fn create_test(State(state): Shared, body: Result<Json<TestRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    project::check_metric_transform(&req.metric_id, req.transform_id.as_deref(), &state.config)
        .map_err(|m| ApiError::bad_request("invalid_reference", m))?;
    let test = BehavioralTest::new(req.slice_id, req.metric_id, req.transform_id, req.comparator, req.threshold);
    let test = state.store().create_test(test)?;
    Ok((StatusCode::CREATED, Json(test)).into_response())
}

async fn delete_test(State(state): Shared, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.store().delete_test(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct SeriesQuery {
    slice: String,
    metric: Option<String>,
    transform: Option<String>,
}

async fn series(State(state): Shared, query: Result<Query<SeriesQuery>, axum::extract::rejection::QueryRejection>) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))?;
    let slice = state.store().slice(&q.slice)?.clone();
    blocking(&state, move |state, p| {
        let metric = match q.metric {
            Some(m) => m,
            None => p.engine.metrics().ids().next().unwrap_or_default().to_string(),
        };
        let transform = q.transform.unwrap_or_else(|| BASE_TRANSFORM.to_string());
        Ok(Json(project::series(&p.engine, &state.config, &slice, &metric, &transform)?).into_response())
    })
    .await
}

#[derive(Serialize)]
struct TestResults {
    models: Vec<String>,
    latest_model: Option<String>,
    failures_latest: usize,
    results: Vec<crate::analysis::TestResult>,
}

async fn test_results(State(state): Shared) -> ApiResult<Response> {
    blocking(&state, |state, p| {
        let store = state.store();
        let results = project::evaluate_all(&p.engine, &store, &state.config)?;
        let models = state.config.model_ids();
        Ok(Json(TestResults {
            latest_model: models.last().cloned(),
            failures_latest: results.iter().filter(|r| r.latest_model_failed).count(),
            models,
            results,
        })
        .into_response())
    })
    .await
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(State(state): Shared, Path(key): Path<String>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    blocking(&state, move |state, p| {
        let store = state.store();
        let doc = project::report_document(&p.engine, &store, &state.config, &key)?;
        drop(store);
        let (body, mime, ext) = match q.format.as_deref().unwrap_or("html") {
            "html" => (doc.to_html(), "text/html; charset=utf-8", "html"),
            "md" | "markdown" => (doc.to_markdown(), "text/markdown; charset=utf-8", "md"),
            "json" => (crate::model::to_canonical_json(&doc), "application/json", "json"),
            other => return Err(ApiError::bad_request("invalid_format", format!("unknown export format `{other}`"))),
        };
        let file = super::export_file_name(&doc.name, ext);
        Ok(Response::builder()
            .header(header::CONTENT_TYPE, mime)
            .header(header::CONTENT_DISPOSITION, format!("attachment; filename=\"{file}\""))
            .body(Body::from(body))
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?)
    })
    .await
}
