//! JSON HTTP service for the pseudo-labeling workflow.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/traces` | trace list |
//! | GET | `/traces/{id}/series?from&to&downsample` | sample window, min/max per bucket |
//! | GET | `/traces/{id}/cycles` | cycle boundaries in samples |
//! | GET | `/traces/{id}/residuals` | cached anchor residuals |
//! | GET | `/traces/{id}/predictions?tau` | anchors thresholded at `tau` (default: session τ) |
//! | GET, PUT | `/cutoff` | session τ; PUT takes `{"tau": x}` or `{"policy": "two_sigma" \| "youden_max"}` |
//! | GET, POST | `/traces/{id}/annotations` | annotation journal |
//! | GET | `/dissimilarity?a&b&trace` | per-cycle Hamming fraction between two sources |
//! | POST | `/export/pseudolabels` | writes `exports/` under the data directory |
//!
//! `tau` is written as a JSON number, or the string `"inf"` when infinite.
//! Errors are `{"error": "..."}` with 400, 404, 409 or 422.

mod journal;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cvsqa_core::assess::fit_two_sigma;
use cvsqa_core::error::Error as CoreError;
use cvsqa_core::pipeline::{
    evaluate_scores, export_pseudolabels, load_corpus, pooled_scores, score_trace, CutoffRule, EvaluationReport,
    TraceScores,
};
pub use cvsqa_core::pipeline::{REVIEW_FILE, REVIEW_MARGIN};
use cvsqa_core::preprocess::{detect_r_peaks, segment_cycles, CycleIndex};
use cvsqa_core::signal::SignalTrace;
use cvsqa_core::train::{load_checkpoint, Checkpoint};
use serde::{Deserialize, Serialize, Serializer};

pub use journal::{AnnotationRecord, Journal, Source, Span};

pub const JOURNAL_FILE: &str = "annotations.ndjson";
pub const EXPORT_DIR: &str = "exports";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory of trace CSVs; also holds the journal and exports.
    pub data_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Anchor spacing used when scoring traces.
    pub eval_stride: usize,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn no_checkpoint() -> Self {
        Self::new(StatusCode::CONFLICT, "no checkpoint is loaded")
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        Self::internal(e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Cut-off value; infinite values serialize as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tau(pub f64);

impl Serialize for Tau {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

fn parse_tau(text: &str) -> ApiResult<Tau> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| ApiError::bad_request(format!("tau `{text}` is not a number")))?;
    check_tau(v)
}

fn check_tau(v: f64) -> ApiResult<Tau> {
    if v.is_nan() || v < 0.0 {
        return Err(ApiError::bad_request(format!("tau must be a non-negative number, got {v}")));
    }
    Ok(Tau(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    TwoSigma,
    YoudenMax,
    Manual,
}

/// Checkpoint and τ, swapped together.
#[derive(Debug, Clone)]
struct Session {
    checkpoint_id: Option<String>,
    checkpoint: Option<Arc<Checkpoint>>,
    tau: f64,
    policy: Policy,
}

struct Inner {
    data_dir: PathBuf,
    eval_stride: usize,
    traces: BTreeMap<String, Arc<SignalTrace>>,
    session: RwLock<Arc<Session>>,
    scores: Mutex<HashMap<String, Arc<TraceScores>>>,
    cycles: Mutex<HashMap<String, Arc<CycleIndex>>>,
    journal: tokio::sync::Mutex<Journal>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Loads every trace in the data directory, the checkpoint if given, and
    /// compacts the annotation journal.
    pub fn open(config: ServiceConfig) -> Result<Self, CoreError> {
        let traces = load_corpus(&config.data_dir)?
            .into_iter()
            .map(|t| (t.trace_id.clone(), Arc::new(t)))
            .collect();
        let session = match &config.checkpoint {
            None => Session {
                checkpoint_id: None,
                checkpoint: None,
                tau: f64::INFINITY,
                policy: Policy::Manual,
            },
            Some(path) => {
                let ckpt = load_checkpoint(path)?;
                let tau = match ckpt.tau {
                    Some(t) => t,
                    None => fit_two_sigma(&ckpt.train_residuals)?,
                };
                Session {
                    checkpoint_id: Some(checkpoint_id(path)),
                    checkpoint: Some(Arc::new(ckpt)),
                    tau,
                    policy: Policy::TwoSigma,
                }
            }
        };
        let journal = Journal::open(config.data_dir.join(JOURNAL_FILE))?;
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir: config.data_dir,
                eval_stride: config.eval_stride.max(1),
                traces,
                session: RwLock::new(Arc::new(session)),
                scores: Mutex::new(HashMap::new()),
                cycles: Mutex::new(HashMap::new()),
                journal: tokio::sync::Mutex::new(journal),
            }),
        })
    }

    fn session(&self) -> Arc<Session> {
        self.inner.session.read().unwrap().clone()
    }

    fn trace(&self, id: &str) -> ApiResult<Arc<SignalTrace>> {
        self.inner
            .traces
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown trace `{id}`")))
    }

    /// Residuals of one trace, computed once per process.
    async fn scores(&self, id: &str) -> ApiResult<Arc<TraceScores>> {
        let trace = self.trace(id)?;
        let ckpt = self.session().checkpoint.clone().ok_or_else(ApiError::no_checkpoint)?;
        if let Some(s) = self.inner.scores.lock().unwrap().get(id) {
            return Ok(s.clone());
        }
        let stride = self.inner.eval_stride;
        let scores = tokio::task::spawn_blocking(move || score_trace(&ckpt, &trace, stride))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
        let mut cache = self.inner.scores.lock().unwrap();
        Ok(cache.entry(id.to_string()).or_insert_with(|| Arc::new(scores)).clone())
    }

    /// Cycle segmentation from the ECG; traces without two R peaks have none.
    async fn cycles(&self, id: &str) -> ApiResult<Arc<CycleIndex>> {
        let trace = self.trace(id)?;
        if let Some(c) = self.inner.cycles.lock().unwrap().get(id) {
            return Ok(c.clone());
        }
        let index = tokio::task::spawn_blocking(move || segment(&trace))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
        let mut cache = self.inner.cycles.lock().unwrap();
        Ok(cache.entry(id.to_string()).or_insert_with(|| Arc::new(index)).clone())
    }

    async fn labeled_scores(&self) -> ApiResult<Vec<TraceScores>> {
        let mut out = Vec::new();
        for (id, t) in &self.inner.traces {
            if t.labels.is_some() {
                out.push((*self.scores(id).await?).clone());
            }
        }
        Ok(out)
    }

    /// Metrics on labeled traces at `tau`; `None` without labeled windows.
    async fn live_metrics(&self, ckpt: &Checkpoint, tau: f64) -> ApiResult<Option<EvaluationReport>> {
        let scores = self.labeled_scores().await?;
        match evaluate_scores(ckpt, &scores, CutoffRule::Manual, Some(tau)) {
            Ok((report, _)) => Ok(Some(report)),
            Err(CoreError::Empty(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

fn checkpoint_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn segment(trace: &SignalTrace) -> Result<CycleIndex, CoreError> {
    let peaks = detect_r_peaks(&trace.ecg, trace.fs)?;
    match segment_cycles(trace, &peaks) {
        Ok(index) => Ok(index),
        Err(CoreError::InsufficientBeats { .. }) => Ok(CycleIndex {
            boundaries: Vec::new(),
            labels: trace.labels.as_ref().map(|_| Vec::new()),
        }),
        Err(e) => Err(e),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/traces", get(list_traces))
        .route("/traces/{id}/series", get(series))
        .route("/traces/{id}/cycles", get(cycles))
        .route("/traces/{id}/residuals", get(residuals))
        .route("/traces/{id}/predictions", get(predictions))
        .route("/traces/{id}/annotations", get(get_annotations).post(post_annotation))
        .route("/cutoff", get(get_cutoff).put(put_cutoff))
        .route("/dissimilarity", get(dissimilarity))
        .route("/export/pseudolabels", post(export))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trace_id: String,
    pub fs: f64,
    pub n_samples: usize,
    pub duration: f64,
    pub labeled: bool,
}

async fn list_traces(State(state): State<AppState>) -> Json<Vec<TraceSummary>> {
    Json(
        state
            .inner
            .traces
            .values()
            .map(|t| TraceSummary {
                trace_id: t.trace_id.clone(),
                fs: t.fs,
                n_samples: t.len(),
                duration: t.duration(),
                labeled: t.labels.is_some(),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct SeriesQuery {
    from: Option<usize>,
    to: Option<usize>,
    downsample: Option<usize>,
}

/// Samples `[from, to)` in buckets of `downsample` samples. Each bucket
/// reports its start time, min and max of both channels and the minimum
/// label (motion wins).
#[derive(Debug, Serialize, Deserialize)]
pub struct Series {
    pub trace_id: String,
    pub fs: f64,
    pub from: usize,
    pub to: usize,
    pub downsample: usize,
    pub t: Vec<f64>,
    pub cvs_min: Vec<f64>,
    pub cvs_max: Vec<f64>,
    pub ecg_min: Vec<f64>,
    pub ecg_max: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

fn bucket_min_max(v: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    v.chunks(k)
        .map(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .unzip()
}

async fn series(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SeriesQuery>,
) -> ApiResult<Json<Series>> {
    let trace = state.trace(&id)?;
    let from = q.from.unwrap_or(0);
    let to = q.to.unwrap_or(trace.len());
    let k = q.downsample.unwrap_or(1);
    if from > to || to > trace.len() {
        return Err(ApiError::bad_request(format!(
            "range [{from}, {to}) is not within [0, {}]",
            trace.len()
        )));
    }
    if k == 0 {
        return Err(ApiError::bad_request("downsample must be at least 1"));
    }
    let (cvs_min, cvs_max) = bucket_min_max(&trace.cvs[from..to], k);
    let (ecg_min, ecg_max) = bucket_min_max(&trace.ecg[from..to], k);
    Ok(Json(Series {
        trace_id: id,
        fs: trace.fs,
        from,
        to,
        downsample: k,
        t: (from..to).step_by(k).map(|i| trace.time(i)).collect(),
        cvs_min,
        cvs_max,
        ecg_min,
        ecg_max,
        labels: trace
            .labels
            .as_ref()
            .map(|l| l[from..to].chunks(k).map(|c| *c.iter().min().unwrap()).collect()),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Cycles {
    pub trace_id: String,
    pub boundaries: Vec<usize>,
    pub labels: Option<Vec<u8>>,
}

async fn cycles(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Cycles>> {
    let index = state.cycles(&id).await?;
    Ok(Json(Cycles {
        trace_id: id,
        boundaries: index.boundaries.clone(),
        labels: index.labels.clone(),
    }))
}

async fn residuals(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<TraceScores>> {
    Ok(Json((*state.scores(&id).await?).clone()))
}

#[derive(Debug, Deserialize)]
struct TauQuery {
    tau: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Predictions {
    pub trace_id: String,
    pub tau: Tau,
    pub anchors: Vec<usize>,
    pub predictions: Vec<u8>,
    /// Per-sample decisions; `null` before the first anchor.
    pub sample_track: Vec<Option<u8>>,
    pub cycle_track: Option<Vec<Option<u8>>>,
}

async fn predictions(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TauQuery>,
) -> ApiResult<Json<Predictions>> {
    let session = state.session();
    let scores = state.scores(&id).await?;
    let tau = match q.tau {
        Some(t) => parse_tau(&t)?.0,
        None => session.tau,
    };
    Ok(Json(Predictions {
        trace_id: id,
        tau: Tau(tau),
        anchors: scores.anchors.clone(),
        predictions: scores.predictions(tau),
        sample_track: scores.sample_track(tau),
        cycle_track: scores.cycle_track(tau),
    }))
}

#[derive(Debug, Serialize)]
pub struct CutoffState {
    pub checkpoint_id: Option<String>,
    pub tau: Tau,
    pub policy: Policy,
    /// Metrics on the labeled traces at `tau`.
    pub metrics: Option<EvaluationReport>,
}

async fn get_cutoff(State(state): State<AppState>) -> ApiResult<Json<CutoffState>> {
    let session = state.session();
    let metrics = match &session.checkpoint {
        Some(ckpt) => state.live_metrics(ckpt, session.tau).await?,
        None => None,
    };
    Ok(Json(CutoffState {
        checkpoint_id: session.checkpoint_id.clone(),
        tau: Tau(session.tau),
        policy: session.policy,
        metrics,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CutoffRequest {
    tau: Option<serde_json::Value>,
    policy: Option<Policy>,
}

async fn put_cutoff(
    State(state): State<AppState>,
    body: Result<Json<CutoffRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<CutoffState>> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let session = state.session();
    let ckpt = session.checkpoint.clone().ok_or_else(ApiError::no_checkpoint)?;
    let (tau, policy) = match (req.tau, req.policy) {
        (Some(v), None | Some(Policy::Manual)) => {
            let tau = match v {
                serde_json::Value::Number(n) => check_tau(n.as_f64().unwrap_or(f64::NAN))?,
                serde_json::Value::String(s) => parse_tau(&s)?,
                other => return Err(ApiError::bad_request(format!("tau must be a number, got {other}"))),
            };
            (tau.0, Policy::Manual)
        }
        (None, Some(Policy::TwoSigma)) => {
            let tau = match ckpt.tau {
                Some(t) => t,
                None => fit_two_sigma(&ckpt.train_residuals).map_err(|e| ApiError::bad_request(e.to_string()))?,
            };
            (tau, Policy::TwoSigma)
        }
        (None, Some(Policy::YoudenMax)) => {
            let scores = state.labeled_scores().await?;
            if scores.is_empty() {
                return Err(ApiError::bad_request("youden_max needs labeled traces"));
            }
            let (a, y) = pooled_scores(&scores)?;
            let y_max = cvsqa_core::assess::youden_max(&a, &y, cvsqa_core::assess::JFormula::Conventional)
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            (y_max.tau, Policy::YoudenMax)
        }
        _ => return Err(ApiError::bad_request("give exactly one of `tau` or `policy`")),
    };
    let next = Arc::new(Session {
        tau,
        policy,
        ..(*session).clone()
    });
    *state.inner.session.write().unwrap() = next;
    let metrics = state.live_metrics(&ckpt, tau).await?;
    Ok(Json(CutoffState {
        checkpoint_id: session.checkpoint_id.clone(),
        tau: Tau(tau),
        policy,
        metrics,
    }))
}

#[derive(Debug, Deserialize)]
struct AnnotationQuery {
    source: Option<Source>,
}

async fn get_annotations(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotationQuery>,
) -> ApiResult<Json<Vec<AnnotationRecord>>> {
    state.trace(&id)?;
    let journal = state.inner.journal.lock().await;
    let mut records = journal.current(&id);
    if let Some(source) = q.source {
        records.retain(|r| r.source == source);
    }
    Ok(Json(records))
}

#[derive(Debug, Deserialize)]
struct AnnotationBody {
    spans: Vec<Span>,
    source: Source,
    author: String,
    #[serde(default)]
    timestamp_ms: u64,
}

async fn post_annotation(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AnnotationBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<AnnotationRecord>)> {
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let index = state.cycles(&id).await?;
    let timestamp_ms = if body.timestamp_ms > 0 {
        body.timestamp_ms
    } else {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    };
    let record = AnnotationRecord {
        trace_id: id,
        spans: body.spans,
        source: body.source,
        author: body.author,
        timestamp_ms,
    };
    record
        .validate(index.len())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    state.inner.journal.lock().await.append(record.clone())?;
    Ok((StatusCode::CREATED, Json(record)))
}

#[derive(Debug, Deserialize)]
struct DissimilarityQuery {
    a: String,
    b: String,
    trace: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Dissimilarity {
    pub trace_id: String,
    pub a: Source,
    pub b: Source,
    pub n_cycles: usize,
    pub n_differing: usize,
    pub value: f64,
}

impl AppState {
    /// Per-cycle labels of `source`: its latest journal record, else the trace
    /// labels (`original`) or current predictions (`machine`).
    async fn source_labels(&self, id: &str, source: Source, index: &CycleIndex) -> ApiResult<Vec<u8>> {
        if let Some(r) = self.inner.journal.lock().await.latest(id, source) {
            return Ok(r.cycle_labels(index.len()));
        }
        let missing = || ApiError::not_found(format!("trace `{id}` has no `{source:?}` annotation"));
        match source {
            Source::Original => index.labels.clone().ok_or_else(missing),
            Source::Machine => {
                let session = self.session();
                if session.checkpoint.is_none() {
                    return Err(missing());
                }
                let track = self.scores(id).await?.sample_track(session.tau);
                Ok(machine_cycle_labels(&track, index))
            }
            Source::Guided => Err(missing()),
        }
    }
}

/// A cycle is motion if any of its samples is; unassessed samples count as normal.
fn machine_cycle_labels(track: &[Option<u8>], index: &CycleIndex) -> Vec<u8> {
    (0..index.len())
        .map(|c| u8::from(!track[index.span(c)].contains(&Some(0))))
        .collect()
}

async fn dissimilarity(
    State(state): State<AppState>,
    Query(q): Query<DissimilarityQuery>,
) -> ApiResult<Json<Dissimilarity>> {
    let a: Source = q.a.parse().map_err(ApiError::bad_request)?;
    let b: Source = q.b.parse().map_err(ApiError::bad_request)?;
    let index = state.cycles(&q.trace).await?;
    let la = state.source_labels(&q.trace, a, &index).await?;
    let lb = state.source_labels(&q.trace, b, &index).await?;
    let n = index.len();
    let diff = la.iter().zip(&lb).filter(|(x, y)| x != y).count();
    Ok(Json(Dissimilarity {
        trace_id: q.trace,
        a,
        b,
        n_cycles: n,
        n_differing: diff,
        value: if n == 0 { 0.0 } else { diff as f64 / n as f64 },
    }))
}

#[derive(Debug, Serialize)]
pub struct ExportSummary {
    pub dir: PathBuf,
    pub tau: Tau,
    pub files: Vec<String>,
    pub review_file: String,
    pub n_review: usize,
}

/// Writes every trace with labels set to the machine predictions at the
/// session τ and a sidecar of low-margin anchors.
async fn export(State(state): State<AppState>) -> ApiResult<Json<ExportSummary>> {
    let session = state.session();
    if session.checkpoint.is_none() {
        return Err(ApiError::no_checkpoint());
    }
    let mut scores = Vec::new();
    for id in state.inner.traces.keys() {
        scores.push(state.scores(id).await?);
    }
    let items: Vec<_> = state.inner.traces.values().map(|t| &**t).zip(scores.iter().map(|s| &**s)).collect();
    let dir = state.inner.data_dir.join(EXPORT_DIR);
    let export = export_pseudolabels(&items, session.tau, &dir)?;
    Ok(Json(ExportSummary {
        dir,
        tau: Tau(session.tau),
        files: export.files,
        review_file: REVIEW_FILE.to_string(),
        n_review: export.anchors.len(),
    }))
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_parsing() {
        assert_eq!(parse_tau("inf").unwrap().0, f64::INFINITY);
        assert_eq!(parse_tau("0").unwrap().0, 0.0);
        assert!(parse_tau("-1").is_err());
        assert!(parse_tau("NaN").is_err());
        assert!(parse_tau("x").is_err());
        assert_eq!(serde_json::to_string(&Tau(f64::INFINITY)).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Tau(1.5)).unwrap(), "1.5");
    }

    #[test]
    fn buckets_cover_ragged_tail() {
        let (lo, hi) = bucket_min_max(&[3.0, 1.0, 2.0, 5.0, 4.0], 2);
        assert_eq!(lo, vec![1.0, 2.0, 4.0]);
        assert_eq!(hi, vec![3.0, 5.0, 4.0]);
    }

    #[test]
    fn machine_cycles_take_any_motion() {
        let index = CycleIndex {
            boundaries: vec![0, 2, 4, 6],
            labels: None,
        };
        let track = [None, Some(1), Some(0), Some(1), Some(1), Some(1)];
        assert_eq!(machine_cycle_labels(&track, &index), vec![1, 0, 1]);
    }
}
