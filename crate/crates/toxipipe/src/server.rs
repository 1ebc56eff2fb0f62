//! HTTP gateway: annotation tasks and labels, agreement, aggregated stats.
//!
//! Label submissions go through one mutex around the annotation store and
//! are appended to `annotation/labels.jsonl` under the work directory
//! before the response is sent. The log is replayed on startup.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use toxipipe_core::annotation::{AnnotationConfig, AnnotationRecord, AnnotationStore, LabelClass};
use toxipipe_core::cohort::CohortStore;
use toxipipe_core::corpus::{self, PostRecord, Source};
use toxipipe_core::pipeline::{self, ExportFilter, ExportFormat, PipelineConfig, COHORT_DIR, MATCHED, TOOL_VERSION};
use toxipipe_core::Error as CoreError;

pub const LABEL_LOG: &str = "annotation/labels.jsonl";

pub struct AppState {
    store: Mutex<AnnotationStore>,
    log: Mutex<File>,
    work_dir: PathBuf,
    salt: String,
    clock: Box<dyn Fn() -> DateTime<Utc> + Send + Sync>,
}

impl AppState {
    /// Load annotation tasks and the guideline, then replay the label log.
    pub fn from_config(cfg: &PipelineConfig) -> anyhow::Result<Self> {
        let work_dir = cfg.work_dir();
        let limit = cfg.server.annotation_task_limit;
        let tasks: Vec<PostRecord> = match &cfg.paths.annotation_tasks {
            Some(p) => corpus::read_all(cfg.resolve(p))?.into_iter().take(limit).collect(),
            None => {
                let matched = work_dir.join(MATCHED);
                if !matched.is_file() {
                    bail!("no annotation tasks: set paths.annotation_tasks or run the ingest stage first");
                }
                corpus::read_matched(&matched)?.into_iter().take(limit).map(|m| m.post).collect()
            }
        };
        let s = &cfg.server;
        let acfg = AnnotationConfig {
            target_annotations: s.target_annotations,
            lease_minutes: s.lease_minutes,
            open_enrollment: s.open_enrollment,
            min_annotators: s.min_annotators,
        };
        let mut store = AnnotationStore::new(tasks, acfg)?;
        for a in &s.annotators {
            store.register(a.clone());
        }
        if let Some(g) = &cfg.paths.guideline {
            let p = cfg.resolve(g);
            store.set_guideline(fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?);
        }
        Self::new(store, work_dir, cfg.cohort.salt.clone())
    }

    /// Wrap an existing store. Replays `LABEL_LOG` from `work_dir` if present.
    pub fn new(mut store: AnnotationStore, work_dir: PathBuf, salt: String) -> anyhow::Result<Self> {
        let log_path = work_dir.join(LABEL_LOG);
        let replayed = replay(&mut store, &log_path)?;
        if replayed > 0 {
            tracing::info!(replayed, "label log replayed");
        }
        fs::create_dir_all(log_path.parent().unwrap())?;
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(AppState { store: Mutex::new(store), log: Mutex::new(log), work_dir, salt, clock: Box::new(Utc::now) })
    }

    /// Replace the wall clock; lease tests drive time by hand.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.store.lock().unwrap().records()
    }
}

fn replay(store: &mut AnnotationStore, path: &Path) -> anyhow::Result<usize> {
    if !path.exists() {
        return Ok(0);
    }
    let mut n = 0;
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: AnnotationRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        match store.submit(&r.post_id, &r.annotator_id, r.label, r.labeled_at) {
            Ok(_) => n += 1,
            Err(e) => tracing::warn!(line = i + 1, error = %e, "skipping logged label"),
        }
    }
    Ok(n)
}

/// JSON error body: `{"error": {"code": ..., "message": ...}}`.
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, code) = match &e {
            CoreError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            CoreError::Contract(_) | CoreError::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            CoreError::Domain(_) => (StatusCode::CONFLICT, "unavailable"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/annotation/next", get(next_task))
        .route("/api/annotation/label", post(submit_label))
        .route("/api/annotation/agreement", get(agreement))
        .route("/api/annotation/guideline", get(guideline))
        .route("/api/stats/aggregate", get(aggregate))
        .route("/api/cohort/summary", get(cohort_summary))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": TOOL_VERSION }))
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

/// What an annotator sees of a post. The author is left out.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TaskView {
    pub post_id: String,
    pub created_at: DateTime<Utc>,
    pub source: Source,
    pub text: String,
}

async fn next_task(State(st): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> ApiResult<Json<serde_json::Value>> {
    let annotator = q
        .annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "missing annotator parameter"))?;
    let now = (st.clock)();
    let mut store = st.store.lock().unwrap();
    let task = store.next_task(&annotator, now)?.map(|p| TaskView {
        post_id: p.post_id.clone(),
        created_at: p.created_at,
        source: p.source,
        text: p.text.clone(),
    });
    Ok(Json(json!({ "task": task })))
}

#[derive(Deserialize)]
struct LabelBody {
    post_id: String,
    annotator_id: String,
    label: String,
}

async fn submit_label(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<AnnotationRecord>> {
    let body: LabelBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("invalid label body: {e}")))?;
    let label: LabelClass = body.label.parse()?;
    let now = (st.clock)();
    let mut store = st.store.lock().unwrap();
    let record = store.submit(&body.post_id, &body.annotator_id, label, now)?.clone();
    let mut line = serde_json::to_vec(&record).expect("record serialises");
    line.push(b'\n');
    let mut log = st.log.lock().unwrap();
    log.write_all(&line)
        .and_then(|_| log.flush())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("label log: {e}")))?;
    Ok(Json(record))
}

/// Agreement payload. `average` is null while no annotator pair shares
/// two labelled posts.
pub fn agreement_payload(records: &[AnnotationRecord]) -> serde_json::Value {
    match toxipipe_core::annotation::pairwise_average_kappa(records) {
        Ok(a) => json!({
            "records": records.len(),
            "average": a.average,
            "annotators": a.annotators,
            "pairs": a.pairs,
            "excluded": a.excluded,
            "matrix": a.matrix(),
        }),
        Err(e) => json!({
            "records": records.len(),
            "average": null,
            "unavailable": e.to_string(),
        }),
    }
}

async fn agreement(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let records = st.records();
    Json(agreement_payload(&records))
}

async fn guideline(State(st): State<Arc<AppState>>) -> Response {
    let text = st.store.lock().unwrap().guideline().to_string();
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()
}

#[derive(Deserialize)]
struct AggregateQuery {
    format: Option<String>,
    region: Option<String>,
}

async fn aggregate(State(st): State<Arc<AppState>>, Query(q): Query<AggregateQuery>) -> ApiResult<Response> {
    let format: ExportFormat = q.format.as_deref().unwrap_or("json").parse()?;
    let filter = ExportFilter { region: q.region };
    let body = pipeline::export_stats(&st.work_dir, format, &filter)?;
    let ctype = match format {
        ExportFormat::Json => "application/json",
        ExportFormat::Csv => "text/csv; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, ctype)], body).into_response())
}

async fn cohort_summary(State(st): State<Arc<AppState>>) -> ApiResult<Json<toxipipe_core::cohort::CohortSummary>> {
    let dir = st.work_dir.join(COHORT_DIR);
    if !dir.is_dir() {
        return Err(ApiError::new(StatusCode::CONFLICT, "unavailable", "no cohort has been built yet"));
    }
    let store = CohortStore::open(&dir, &st.salt)?;
    Ok(Json(store.cohort.summary()))
}

/// Bind and serve until `shutdown` resolves. In-flight requests finish
/// before this returns.
pub async fn serve(
    cfg: &PipelineConfig,
    addr: &str,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let state = Arc::new(AppState::from_config(cfg)?);
    let static_dir = cfg.server.static_dir.as_ref().map(|d| cfg.resolve(d));
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, static_dir)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
