//! HTTP API over a built corpus: artifact browsing, sampling plans,
//! evaluation submission and the aggregate reports.
//!
//! Every JSON body, errors included, is a versioned document envelope
//! `{"schema_version", "kind", "data"}`. The corpus is never written to;
//! evaluations go to their own append-only log.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use drawsim_core::conceptmap::render_map;
use drawsim_core::corpus::{consistency_rows, reindex, Artifact, ArtifactStore, CorpusManifest, ManifestEntry, SamplingPlan};
use drawsim_core::digest::sha256_hex;
use drawsim_core::docs::to_document;
use drawsim_core::metrics::tables::{consistency_table, evaluation_table};
use drawsim_core::metrics::{consistency_report, summarize, EvaluationRecord, FieldError};
use drawsim_core::profiles::PerformanceLevel;
use drawsim_core::providers::Embedder;
use drawsim_core::standards::{Domain, GradeBand};
use drawsim_core::{ConsistencyReportF64, EvaluationSummaryF64};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::evaluations::{EvaluationStore, StoredEvaluation};

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub bind: SocketAddr,
    pub root: PathBuf,
    /// Rejects evaluation submissions with 403.
    pub read_only: bool,
    /// Name of the environment variable holding the bearer token required
    /// for submissions. Unset or empty means no token is required.
    pub auth_token_env: Option<String>,
    /// Restricts submissions to one plan; by default every plan under
    /// `<root>/plans` is active.
    pub active_plan: Option<String>,
    /// Defaults to `<root>/evaluations/evaluations.jsonl`.
    pub evaluations: Option<PathBuf>,
}

impl ApiConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            root: root.into(),
            read_only: false,
            auth_token_env: None,
            active_plan: None,
            evaluations: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("corpus root {0} has no corpus to serve")]
    MissingCorpus(String),
    #[error("active plan {0} not found")]
    MissingPlan(String),
    #[error(transparent)]
    Corpus(#[from] drawsim_core::corpus::CorpusError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

pub struct AppState {
    store: ArtifactStore,
    manifest: CorpusManifest,
    plans: BTreeMap<String, SamplingPlan>,
    active_plan: Option<String>,
    evaluations: EvaluationStore,
    read_only: bool,
    token: Option<String>,
    embedder: Arc<dyn Embedder>,
    /// Memoized consistency reports keyed by the query.
    consistency_cache: RwLock<BTreeMap<String, ConsistencyReportF64>>,
}

impl AppState {
    pub fn load(cfg: &ApiConfig, embedder: Arc<dyn Embedder>) -> Result<Self, ServiceError> {
        let store = ArtifactStore::new(&cfg.root);
        if !store.corpus_dir().is_dir() {
            return Err(ServiceError::MissingCorpus(cfg.root.display().to_string()));
        }
        let manifest = reindex(&cfg.root, None)?;
        let plans = load_plans(&cfg.root)?;
        if let Some(id) = &cfg.active_plan {
            if !plans.contains_key(id) {
                return Err(ServiceError::MissingPlan(id.clone()));
            }
        }
        let eval_path = cfg
            .evaluations
            .clone()
            .unwrap_or_else(|| cfg.root.join("evaluations").join("evaluations.jsonl"));
        let evaluations =
            EvaluationStore::open(&eval_path).map_err(|e| ServiceError::Io(eval_path.display().to_string(), e))?;
        let token = cfg
            .auth_token_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        Ok(Self {
            store,
            manifest,
            plans,
            active_plan: cfg.active_plan.clone(),
            evaluations,
            read_only: cfg.read_only,
            token,
            embedder,
            consistency_cache: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn evaluations(&self) -> &EvaluationStore {
        &self.evaluations
    }

    fn active_plans(&self) -> impl Iterator<Item = &SamplingPlan> {
        self.plans
            .values()
            .filter(|p| self.active_plan.as_ref().is_none_or(|id| &p.id == id))
    }
}

fn load_plans(root: &Path) -> Result<BTreeMap<String, SamplingPlan>, ServiceError> {
    let dir = root.join("plans");
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let entries = std::fs::read_dir(&dir).map_err(|e| ServiceError::Io(dir.display().to_string(), e))?;
    for entry in entries {
        let path = entry.map_err(|e| ServiceError::Io(dir.display().to_string(), e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let plan = SamplingPlan::load(&path)?;
            out.insert(plan.id.clone(), plan);
        }
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("evaluation record is invalid")]
    Validation(Vec<FieldError>),
    #[error("{0}")]
    PlanViolation(String),
    #[error("the service is read-only")]
    ReadOnly,
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fields: Vec<FieldError>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ApiError::PlanViolation(_) => (StatusCode::CONFLICT, "plan_violation"),
            ApiError::ReadOnly => (StatusCode::FORBIDDEN, "read_only"),
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        let fields = match &self {
            ApiError::Validation(f) => f.clone(),
            _ => Vec::new(),
        };
        let body = ErrorBody {
            code,
            message: self.to_string(),
            fields,
        };
        json_doc(status, "error", &body)
    }
}

fn json_doc<T: Serialize>(status: StatusCode, kind: &str, value: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], to_document(kind, value)).into_response()
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

fn etag_matches(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"))
}

/// Body with an ETag, or 304 when the client already has it.
fn tagged(headers: &HeaderMap, etag: String, content_type: &'static str, body: impl Into<Body>) -> Response {
    let etag_value = HeaderValue::from_str(&etag).expect("hex etag is a valid header");
    if etag_matches(headers, &etag) {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, etag_value)]).into_response();
    }
    (
        StatusCode::OK,
        [(header::CONTENT_TYPE, HeaderValue::from_static(content_type)), (header::ETAG, etag_value)],
        body.into(),
    )
        .into_response()
}

/// Content type from the file signature rather than the stored name.
pub fn sniff_content_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xff, 0xd8, 0xff, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/artifacts", get(list_artifacts))
        .route("/artifacts/{id}", get(get_artifact))
        .route("/artifacts/{id}/image", get(get_image))
        .route("/artifacts/{id}/cmap.dot", get(get_cmap_dot))
        .route("/plans", get(list_plans))
        .route("/plans/{id}", get(get_plan))
        .route("/evaluations", post(submit_evaluation))
        .route("/evaluations/{rater}/{artifact}", get(evaluation_history))
        .route("/reports/aggregate", get(aggregate_report))
        .route("/reports/consistency", get(consistency_endpoint))
        .with_state(state)
}

pub async fn serve(cfg: ApiConfig, embedder: Arc<dyn Embedder>) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(&cfg, embedder)?);
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| ServiceError::Io(format!("bind {}", cfg.bind), e))?;
    log::info!(
        "serving {} artifacts from {} on {}",
        state.manifest.artifacts.len(),
        cfg.root.display(),
        cfg.bind
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Io("server".into(), e))?;
    Ok(())
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    artifacts: usize,
    plans: usize,
    read_only: bool,
}

async fn health(State(s): State<Arc<AppState>>) -> Response {
    json_doc(
        StatusCode::OK,
        "health",
        &Health {
            status: "ok",
            artifacts: s.manifest.artifacts.len(),
            plans: s.plans.len(),
            read_only: s.read_only,
        },
    )
}

#[derive(Debug, Default, Deserialize)]
pub struct ArtifactFilter {
    pub topic: Option<String>,
    pub level: Option<u8>,
    pub grade_band: Option<String>,
    pub domain: Option<String>,
}

impl ArtifactFilter {
    /// Applies the filter to manifest entries, in manifest order.
    pub fn apply<'a>(&self, entries: &'a [ManifestEntry]) -> Result<Vec<&'a ManifestEntry>, ApiError> {
        let level = self
            .level
            .map(|v| PerformanceLevel::from_value(v).ok_or_else(|| ApiError::BadRequest(format!("level {v} is not 1-4"))))
            .transpose()?;
        let band = self
            .grade_band
            .as_deref()
            .map(|b| GradeBand::parse(b).ok_or_else(|| ApiError::BadRequest(format!("unknown grade band {b}"))))
            .transpose()?;
        let domain = self
            .domain
            .as_deref()
            .map(|d| Domain::parse(d).ok_or_else(|| ApiError::BadRequest(format!("unknown domain {d}"))))
            .transpose()?;
        Ok(entries
            .iter()
            .filter(|e| self.topic.as_ref().is_none_or(|t| &e.topic_ref == t))
            .filter(|e| level.is_none_or(|l| e.level == l))
            .filter(|e| band.is_none_or(|b| e.grade_band == b))
            .filter(|e| domain.is_none_or(|d| e.domain == d))
            .collect())
    }
}

#[derive(Serialize)]
struct ArtifactList<'a> {
    count: usize,
    ids: Vec<&'a str>,
    artifacts: Vec<&'a ManifestEntry>,
}

async fn list_artifacts(State(s): State<Arc<AppState>>, Query(f): Query<ArtifactFilter>) -> Result<Response, ApiError> {
    let hits = f.apply(&s.manifest.artifacts)?;
    Ok(json_doc(
        StatusCode::OK,
        "artifact_list",
        &ArtifactList {
            count: hits.len(),
            ids: hits.iter().map(|e| e.id.as_str()).collect(),
            artifacts: hits,
        },
    ))
}

fn load_artifact(s: &AppState, id: &str) -> Result<Artifact, ApiError> {
    let entry = s
        .manifest
        .entry(id)
        .ok_or_else(|| ApiError::NotFound(format!("artifact {id} not found")))?;
    s.store.load_dir(&s.store.root().join(&entry.path)).map_err(internal)
}

async fn get_artifact(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let a = load_artifact(&s, &id)?;
    // ids are content hashes, so they double as strong validators
    Ok(tagged(&headers, format!("\"{}\"", a.id), "application/json", to_document("artifact", &a)))
}

async fn get_image(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let a = load_artifact(&s, &id)?;
    let bytes = s.store.image(&a).map_err(internal)?;
    Ok(tagged(&headers, format!("\"{}\"", a.image.sha256), sniff_content_type(&bytes), bytes))
}

async fn get_cmap_dot(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let a = load_artifact(&s, &id)?;
    let dot = render_map(&a.cmap).map_err(internal)?;
    let etag = format!("\"{}\"", &sha256_hex(dot.as_bytes())[..32]);
    Ok(tagged(&headers, etag, "text/vnd.graphviz; charset=utf-8", dot))
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    id: &'a str,
    raters: &'a [String],
    per_rater: usize,
    active: bool,
}

async fn list_plans(State(s): State<Arc<AppState>>) -> Response {
    let active: BTreeSet<&str> = s.active_plans().map(|p| p.id.as_str()).collect();
    let list: Vec<_> = s
        .plans
        .values()
        .map(|p| PlanSummary {
            id: &p.id,
            raters: &p.raters,
            per_rater: p.per_rater,
            active: active.contains(p.id.as_str()),
        })
        .collect();
    json_doc(StatusCode::OK, "plan_list", &list)
}

async fn get_plan(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let plan = s.plans.get(&id).ok_or_else(|| ApiError::NotFound(format!("plan {id} not found")))?;
    Ok(json_doc(StatusCode::OK, "sampling_plan", plan))
}

const TERNARY_VALUES: [&str; 6] = ["Yes", "Partially", "No", "yes", "partially", "no"];

/// Field-level checks on the raw JSON, so a malformed answer is reported
/// against its question rather than as an opaque parse error.
fn parse_record(body: &[u8]) -> Result<EvaluationRecord, ApiError> {
    let v: Value = serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("body is not JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| ApiError::BadRequest("body must be a JSON object".into()))?;
    let mut errs = Vec::new();
    let mut fail = |field: &str, message: String| {
        errs.push(FieldError {
            field: field.into(),
            message,
        })
    };
    for field in ["rater_id", "artifact_id"] {
        if !obj.get(field).is_some_and(Value::is_string) {
            fail(field, "required string".into());
        }
    }
    for field in ["q1", "q2", "q3", "q4", "q5", "q6"] {
        match obj.get(field).and_then(Value::as_str) {
            Some(s) if TERNARY_VALUES.contains(&s) => {}
            Some(s) => fail(field, format!("`{s}` is not Yes, Partially or No")),
            None => fail(field, "required: Yes, Partially or No".into()),
        }
    }
    for field in ["q7", "q8"] {
        match obj.get(field).and_then(Value::as_u64) {
            Some(n) if (1..=5).contains(&n) => {}
            Some(n) => fail(field, format!("Likert value {n} outside 1-5")),
            None => fail(field, "required integer 1-5".into()),
        }
    }
    if obj.get("comments").is_some_and(|c| !c.is_string() && !c.is_null()) {
        fail("comments", "must be a string".into());
    }
    if !errs.is_empty() {
        return Err(ApiError::Validation(errs));
    }
    let mut v = v;
    if v.get("comments").is_some_and(Value::is_null) {
        v.as_object_mut().expect("checked object").remove("comments");
    }
    let record: EvaluationRecord = serde_json::from_value(v).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    record.validate().map_err(ApiError::Validation)?;
    Ok(record)
}

#[derive(Serialize)]
struct SubmitResponse {
    stored: StoredEvaluation,
    audit_length: usize,
}

async fn submit_evaluation(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    if s.read_only {
        return Err(ApiError::ReadOnly);
    }
    if let Some(token) = &s.token {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return Err(ApiError::Unauthorized);
        }
    }
    let record = parse_record(&body)?;
    if s.manifest.entry(&record.artifact_id).is_none() {
        return Err(ApiError::NotFound(format!("artifact {} not found", record.artifact_id)));
    }
    let mut rater_known = false;
    let mut assigned = false;
    for plan in s.active_plans() {
        rater_known |= plan.assignment.contains_key(&record.rater_id);
        assigned |= plan.is_assigned(&record.rater_id, &record.artifact_id);
    }
    if !rater_known {
        return Err(ApiError::PlanViolation(format!(
            "rater {} is not in an active plan",
            record.rater_id
        )));
    }
    if !assigned {
        return Err(ApiError::PlanViolation(format!(
            "artifact {} is not assigned to rater {}",
            record.artifact_id, record.rater_id
        )));
    }
    let (rater, artifact) = (record.rater_id.clone(), record.artifact_id.clone());
    let stored = s.evaluations.submit(record).map_err(internal)?;
    let audit_length = s.evaluations.history(&rater, &artifact).len();
    Ok(json_doc(
        StatusCode::CREATED,
        "evaluation_receipt",
        &SubmitResponse { stored, audit_length },
    ))
}

async fn evaluation_history(
    State(s): State<Arc<AppState>>,
    UrlPath((rater, artifact)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let h = s.evaluations.history(&rater, &artifact);
    if h.is_empty() {
        return Err(ApiError::NotFound(format!("no evaluation of {artifact} by {rater}")));
    }
    Ok(json_doc(StatusCode::OK, "evaluation_history", &h))
}

#[derive(Serialize)]
struct AggregateBody {
    summary: EvaluationSummaryF64,
    table: String,
}

async fn aggregate_report(State(s): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let records = s.evaluations.effective();
    let summary: EvaluationSummaryF64 = summarize(&records).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let table = evaluation_table(&summary);
    Ok(json_doc(StatusCode::OK, "evaluation_summary", &AggregateBody { summary, table }))
}

#[derive(Debug, Default, Deserialize)]
struct ConsistencyQuery {
    plan: Option<String>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct ConsistencyBody {
    report: ConsistencyReportF64,
    table: String,
}

async fn consistency_endpoint(
    State(s): State<Arc<AppState>>,
    Query(q): Query<ConsistencyQuery>,
) -> Result<Response, ApiError> {
    let key = format!("{:?}/{:?}", q.plan, q.limit);
    if let Some(report) = s.consistency_cache.read().get(&key).cloned() {
        let table = consistency_table(&report);
        return Ok(json_doc(StatusCode::OK, "consistency_report", &ConsistencyBody { report, table }));
    }
    let mut entries: Vec<ManifestEntry> = match &q.plan {
        Some(id) => {
            let plan = s.plans.get(id).ok_or_else(|| ApiError::NotFound(format!("plan {id} not found")))?;
            let ids: BTreeSet<&str> = plan.assignment.values().flatten().map(String::as_str).collect();
            s.manifest.artifacts.iter().filter(|e| ids.contains(e.id.as_str())).cloned().collect()
        }
        None => s.manifest.artifacts.clone(),
    };
    if let Some(n) = q.limit {
        entries.truncate(n);
    }
    let state = Arc::clone(&s);
    let report = tokio::task::spawn_blocking(move || -> Result<ConsistencyReportF64, ApiError> {
        let rows = consistency_rows::<f64>(&state.store, &entries, state.embedder.as_ref()).map_err(internal)?;
        consistency_report(&rows).map_err(|e| ApiError::BadRequest(e.to_string()))
    })
    .await
    .map_err(internal)??;
    s.consistency_cache.write().insert(key, report.clone());
    let table = consistency_table(&report);
    Ok(json_doc(StatusCode::OK, "consistency_report", &ConsistencyBody { report, table }))
}
