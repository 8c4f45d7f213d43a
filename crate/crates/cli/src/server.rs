//! JSON API under `/api/v1`.
//!
//! Writes go through one mutex-guarded [`Project`]; reads clone the latest
//! published manifest and read content-addressed objects, which never change
//! once written, so readers never wait on writers.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cgt_core::alignment::{alignment_report, CurationEdit, QueryTermSet};
use cgt_core::annotation::{
    adjudicate, apply_exclusions, AnnotationError, AnnotationSession, AuditEntry, Coherence, FinalTopicSet, Issue,
    Relatedness, TopicAnnotation,
};
use cgt_core::coding::{coding_load_report, CodingError, CodingInput, CodingWorkbook};
use cgt_core::project::{Project, ProjectError};
use cgt_core::qdtm::BundleEntry;
use cgt_core::sampling::{label_frequencies, ClassificationTable, SamplingError};
use cgt_core::{AnnotationBundle, TopicTree, WorkbenchConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::ops;
use crate::store::{self, require, AlignmentInput, AlignmentState, Auth};

const SUBMIT_ACTION: &str = "annotation.submit";

struct Writer {
    project: Project,
    /// (annotator, idempotency key) -> the audit entry of the original submission.
    idempotency: HashMap<(String, String), AuditEntry>,
}

pub struct AppState {
    writer: Mutex<Writer>,
    snapshot: RwLock<Project>,
    config: WorkbenchConfig,
    researcher_token: Option<String>,
    /// Annotator bearer token -> annotator id.
    annotators: HashMap<String, String>,
}

impl AppState {
    pub fn new(project: Project, config: WorkbenchConfig) -> Result<Self> {
        let researcher_token = project.try_get_json::<Auth>(store::AUTH)?.map(|a| a.researcher_token);
        let annotators = project
            .try_get_json::<AnnotationSession>(store::SESSION)?
            .map(|s| s.annotators.into_iter().map(|a| (a.token, a.id)).collect())
            .unwrap_or_default();
        let mut idempotency = HashMap::new();
        for e in project.events()? {
            if e.action != SUBMIT_ACTION {
                continue;
            }
            let key = e.detail.get("idempotency_key").and_then(Value::as_str);
            let audit = e.detail.get("audit").cloned().and_then(|a| serde_json::from_value::<AuditEntry>(a).ok());
            if let (Some(key), Some(audit)) = (key, audit) {
                idempotency.insert((audit.annotator.clone(), key.to_string()), audit);
            }
        }
        Ok(Self {
            snapshot: RwLock::new(project.clone()),
            writer: Mutex::new(Writer { project, idempotency }),
            config,
            researcher_token,
            annotators,
        })
    }

    fn read(&self) -> Project {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Runs `f` as the single writer and publishes the resulting manifest.
    fn write<T>(&self, f: impl FnOnce(&mut Writer) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut w = self.writer.lock().expect("writer lock");
        let out = f(&mut w);
        *self.snapshot.write().expect("snapshot lock") = w.project.clone();
        out
    }
}

/// Structured error body `{code, message, field}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_string(), message: message.into(), field: None }
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")
    }

    fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "researcher token required")
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "field": self.field});
        (self.status, Json(body)).into_response()
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match &e {
            AnnotationError::SessionIncomplete | AnnotationError::IncompleteAnnotations { .. } => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self { status, code: e.code().to_string(), message: e.to_string(), field: e.field() }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        use cgt_core::Error as E;
        match e {
            CliError::Core(E::Annotation(a)) => a.into(),
            CliError::Missing { artifact, .. } | CliError::Core(E::Project(ProjectError::UnknownArtifact(artifact))) => {
                Self::not_found(format!("artifact {artifact} does not exist yet"))
            }
            CliError::Core(E::Coding(c @ CodingError::UnknownTopic(_))) => Self::not_found(c.to_string()),
            CliError::Core(E::Coding(c @ CodingError::UnknownPost { .. })) => ApiError {
                field: Some("post"),
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_post", c.to_string())
            },
            CliError::Core(E::Sampling(s @ (SamplingError::UnknownLabel(_) | SamplingError::NotEnough { .. }))) => ApiError {
                field: Some(if matches!(s, SamplingError::UnknownLabel(_)) { "label" } else { "n" }),
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_sample", s.to_string())
            },
            e if e.exit_code() == crate::error::EXIT_IO => {
                log::error!("{e}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io_error", e.to_string())
            }
            e => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", e.to_string()),
        }
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        CliError::from(e).into()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::malformed(e.to_string()))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get("authorization")?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

enum Role {
    Researcher,
    Annotator(String),
}

fn role(state: &AppState, headers: &HeaderMap) -> ApiResult<Role> {
    let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
    if state.researcher_token.as_deref() == Some(token) {
        return Ok(Role::Researcher);
    }
    state.annotators.get(token).map(|a| Role::Annotator(a.clone())).ok_or_else(ApiError::unauthorized)
}

fn researcher(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    match role(state, headers)? {
        Role::Researcher => Ok(()),
        Role::Annotator(_) => Err(ApiError::forbidden()),
    }
}

fn annotator(state: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    match role(state, headers)? {
        Role::Annotator(a) => Ok(a),
        Role::Researcher => Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "annotator token required")),
    }
}

fn get_json<T: for<'de> Deserialize<'de>>(project: &Project, name: &str) -> ApiResult<T> {
    Ok(require(project, name)?)
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/status", get(status))
        .route("/tasks", get(tasks))
        .route("/annotations", get(my_annotations).post(submit))
        .route("/session", get(session_progress))
        .route("/agreement", get(agreement))
        .route("/adjudication", get(adjudication_view).post(adjudication_run))
        .route("/final-set", get(final_set))
        .route("/final-set/topics/{topic_id}/labels", put(set_labels))
        .route("/tree", get(tree))
        .route("/bundle", get(bundle))
        .route("/alignment", get(alignment).put(update_alignment))
        .route("/query-sets", get(query_sets))
        .route("/query-sets/edits", put(update_edits))
        .route("/sampling/histogram", get(histogram))
        .route("/sampling/draws", post(draw))
        .route("/coding/report", get(coding_report))
        .route("/coding/sheets", get(sheets).post(create_sheets))
        .route("/coding/sheets/{topic_id}", get(sheet))
        .route("/coding/sheets/{topic_id}/entries", post(record_coding));
    Router::new()
        .nest("/api/v1", api)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Binds `address` and serves until the process is stopped.
pub fn serve(project: Project, config: WorkbenchConfig, address: &str) -> Result<()> {
    let state = Arc::new(AppState::new(project, config)?);
    let rt = tokio::runtime::Runtime::new().map_err(CliError::io("starting runtime"))?;
    rt.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(address).await.map_err(CliError::io(format!("binding {address}")))?;
        log::info!("listening on {address}");
        println!("serving /api/v1 on {address}");
        axum::serve(listener, router(state)).await.map_err(CliError::io("serving"))
    })
}

async fn status(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let p = state.read();
    let session = p.try_get_json::<AnnotationSession>(store::SESSION)?;
    let progress = session.map(|s| progress(&s));
    Ok(Json(json!({"project": p.status(), "session": progress})))
}

#[derive(Debug, Serialize)]
struct Progress {
    stages: Vec<usize>,
    complete: bool,
    annotators: Vec<AnnotatorProgress>,
}

#[derive(Debug, Serialize)]
struct AnnotatorProgress {
    id: String,
    done: usize,
    remaining: usize,
}

fn progress(s: &AnnotationSession) -> Progress {
    Progress {
        stages: (0..s.stage_count()).map(|i| s.topics.iter().filter(|t| t.stage == i).count()).collect(),
        complete: s.is_complete(),
        annotators: s
            .annotators
            .iter()
            .map(|a| {
                let remaining = s.remaining(&a.id).len();
                AnnotatorProgress { id: a.id.clone(), done: s.topics.len() - remaining, remaining }
            })
            .collect(),
    }
}

#[derive(Debug, Serialize)]
struct TaskView<'a> {
    topic_id: &'a str,
    parent_id: Option<&'a str>,
    /// One-based stage number.
    stage: usize,
    posts: &'a [cgt_core::qdtm::BundlePost],
    terms: &'a [String],
    /// The main topic's posts and terms when the task is a subtopic.
    parent: Option<&'a BundleEntry>,
}

/// Per-annotator shuffle seed, stable across restarts.
fn order_seed(seed: u64, annotator: &str) -> u64 {
    let mut h = DefaultHasher::new();
    annotator.hash(&mut h);
    seed ^ h.finish()
}

async fn tasks(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let who = annotator(&state, &headers)?;
    let p = state.read();
    let session: AnnotationSession = get_json(&p, store::SESSION)?;
    let bundle: AnnotationBundle = get_json(&p, store::BUNDLE)?;
    let mut remaining = session.remaining(&who);
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed(state.config.seed, &who));
    remaining.shuffle(&mut rng);
    remaining.sort_by_key(|t| t.stage);
    let views: Vec<TaskView> = remaining
        .iter()
        .filter_map(|t| {
            let e = bundle.entry(&t.topic_id)?;
            Some(TaskView {
                topic_id: &e.topic_id,
                parent_id: e.parent_id.as_deref(),
                stage: t.stage + 1,
                posts: &e.posts,
                terms: &e.terms,
                parent: e.parent_id.as_deref().and_then(|pid| bundle.entry(pid)),
            })
        })
        .collect();
    Ok(Json(json!({"annotator": who, "remaining": views.len(), "tasks": views})))
}

async fn my_annotations(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let who = annotator(&state, &headers)?;
    let session: AnnotationSession = get_json(&state.read(), store::SESSION)?;
    let records: Vec<&TopicAnnotation> = session.records.get(&who).map(|m| m.values().collect()).unwrap_or_default();
    Ok(Json(json!({"annotator": who, "annotations": records})))
}

/// Submission body; the annotator comes from the bearer token.
#[derive(Debug, Deserialize)]
struct Submission {
    topic_id: String,
    coherence: Coherence,
    issue: Issue,
    #[serde(default)]
    implicated_posts: Vec<u8>,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    relatedness: Option<Relatedness>,
}

async fn submit(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let who = annotator(&state, &headers)?;
    let s: Submission = parse(&body)?;
    let key = headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string);
    let record = TopicAnnotation {
        annotator: who.clone(),
        topic_id: s.topic_id,
        coherence: s.coherence,
        issue: s.issue,
        implicated_posts: s.implicated_posts,
        labels: s.labels,
        relatedness: s.relatedness,
    };
    state.write(|w| {
        if let Some(k) = &key {
            if let Some(audit) = w.idempotency.get(&(who.clone(), k.clone())) {
                return Ok((StatusCode::OK, Json(json!({"audit": audit, "replayed": true}))).into_response());
            }
        }
        let mut session: AnnotationSession = get_json(&w.project, store::SESSION)?;
        let audit = session.submit(record)?;
        w.project.put_json(
            store::SESSION,
            &session,
            SUBMIT_ACTION,
            json!({"audit": audit, "idempotency_key": key}),
        )?;
        if let Some(k) = key {
            w.idempotency.insert((who.clone(), k), audit.clone());
        }
        let remaining = session.remaining(&who).len();
        Ok((StatusCode::CREATED, Json(json!({"audit": audit, "remaining": remaining, "replayed": false}))).into_response())
    })
}

async fn session_progress(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let session: AnnotationSession = get_json(&state.read(), store::SESSION)?;
    Ok(Json(json!(progress(&session))))
}

fn complete_session(p: &Project) -> ApiResult<AnnotationSession> {
    let session: AnnotationSession = get_json(p, store::SESSION)?;
    if !session.is_complete() {
        return Err(AnnotationError::SessionIncomplete.into());
    }
    Ok(session)
}

async fn agreement(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let session = complete_session(&state.read())?;
    let (_, report) = adjudicate(&session)?;
    let table = report.to_table();
    Ok(Json(json!({"report": report, "table": table})))
}

async fn adjudication_view(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let session = complete_session(&state.read())?;
    let (result, report) = adjudicate(&session)?;
    let final_set = apply_exclusions(&result);
    Ok(Json(json!({"result": result, "report": report, "final_set": final_set})))
}

async fn adjudication_run(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    state.write(|w| {
        let (adj, final_set) = ops::adjudicate_session(&mut w.project)?;
        Ok(Json(json!({"result": adj.result, "report": adj.report, "final_set": final_set})))
    })
}

async fn final_set(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<FinalTopicSet>> {
    researcher(&state, &headers)?;
    Ok(Json(get_json(&state.read(), store::FINAL_SET)?))
}

#[derive(Debug, Deserialize)]
struct Labels {
    labels: Vec<String>,
}

/// Replaces a retained topic's labels with the researcher's choice.
async fn set_labels(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(topic_id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let Labels { labels } = parse(&body)?;
    let labels: Vec<String> = labels.into_iter().map(|l| l.trim().to_string()).collect();
    if labels.is_empty() || labels.iter().any(String::is_empty) {
        return Err(ApiError { field: Some("labels"), ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "blank_label", "labels must be non-empty") });
    }
    state.write(|w| {
        let mut set: FinalTopicSet = get_json(&w.project, store::FINAL_SET)?;
        let topic = set
            .retained
            .iter_mut()
            .find(|t| t.topic_id == topic_id)
            .ok_or_else(|| ApiError::not_found(format!("topic {topic_id} is not retained")))?;
        topic.initial_labels = labels.clone();
        w.project.put_json(store::FINAL_SET, &set, "final-set.label", json!({"topic_id": topic_id, "labels": labels}))?;
        Ok(Json(json!({"topic_id": topic_id, "labels": labels})))
    })
}

async fn tree(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<TopicTree>> {
    researcher(&state, &headers)?;
    Ok(Json(get_json(&state.read(), store::TREE)?))
}

async fn bundle(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<AnnotationBundle>> {
    researcher(&state, &headers)?;
    Ok(Json(get_json(&state.read(), store::BUNDLE)?))
}

async fn alignment(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let s: AlignmentState = get_json(&state.read(), store::ALIGNMENT)?;
    let report = alignment_report(&s.matrix);
    Ok(Json(json!({"alignment": s, "report": report})))
}

async fn update_alignment(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let input: AlignmentInput = parse(&body)?;
    state.write(|w| {
        let s = ops::record_alignment_input(&mut w.project, input)?;
        let report = alignment_report(&s.matrix);
        Ok(Json(json!({"alignment": s, "report": report})))
    })
}

async fn query_sets(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let p = state.read();
    let sets: Vec<QueryTermSet> = get_json(&p, store::QUERY_SETS)?;
    let edits: Vec<CurationEdit> = p.try_get_json(store::CURATION)?.unwrap_or_default();
    Ok(Json(json!({"query_sets": sets, "edits": edits})))
}

async fn update_edits(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let edits: Vec<CurationEdit> = parse(&body)?;
    state.write(|w| {
        let sets = ops::derive_terms(&mut w.project, Some(edits.clone()))?;
        Ok(Json(json!({"query_sets": sets, "edits": edits})))
    })
}

async fn histogram(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let table: ClassificationTable = get_json(&state.read(), store::CLASSIFICATION)?;
    let hist = label_frequencies(&table).map_err(CliError::from)?;
    Ok(Json(json!(hist)))
}

#[derive(Debug, Deserialize)]
struct DrawRequest {
    label: String,
    n: Option<usize>,
    seed: Option<u64>,
}

async fn draw(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    researcher(&state, &headers)?;
    let req: DrawRequest = parse(&body)?;
    let n = req.n.unwrap_or(state.config.sampling.sample_size);
    let seed = req.seed.unwrap_or(state.config.seed);
    state.write(|w| {
        let records = ops::draw(&mut w.project, &req.label, n, seed)?;
        Ok((StatusCode::CREATED, Json(json!({"label": req.label, "n": n, "seed": seed, "documents": records}))).into_response())
    })
}

async fn coding_report(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let posts = ops::topic_posts(&state.read(), &state.config)?;
    let c = &state.config.coding;
    Ok(Json(json!(coding_load_report(&posts, c.posts_per_topic, c.token_ceiling))))
}

async fn sheets(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<CodingWorkbook>> {
    researcher(&state, &headers)?;
    Ok(Json(get_json(&state.read(), store::WORKBOOK)?))
}

async fn create_sheets(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Response> {
    researcher(&state, &headers)?;
    let config = state.config.clone();
    state.write(|w| {
        let existed = w.project.has(store::WORKBOOK);
        let wb = ops::ensure_workbook(&mut w.project, &config)?;
        let status = if existed { StatusCode::OK } else { StatusCode::CREATED };
        Ok((status, Json(wb)).into_response())
    })
}

async fn sheet(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(topic_id): Path<String>) -> ApiResult<Json<Value>> {
    researcher(&state, &headers)?;
    let wb: CodingWorkbook = get_json(&state.read(), store::WORKBOOK)?;
    let group = wb
        .groups
        .iter()
        .find(|g| g.sheets.iter().any(|s| s.topic_id == topic_id))
        .ok_or_else(|| ApiError::not_found(format!("no coding sheet for topic {topic_id}")))?;
    let sheet = wb.sheet(&topic_id).expect("group holds the sheet");
    Ok(Json(json!({"header": group.header, "sheet": sheet})))
}

async fn record_coding(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(topic_id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    researcher(&state, &headers)?;
    let input: CodingInput = parse(&body)?;
    state.write(|w| {
        let mut wb: CodingWorkbook = get_json(&w.project, store::WORKBOOK)?;
        let entry = wb.record(&topic_id, input).map_err(CliError::from)?.clone();
        let status = wb.sheet(&topic_id).expect("recorded").status;
        w.project.put_json(store::WORKBOOK, &wb, "coding.record", json!({"topic_id": topic_id, "post": entry.input.post, "seq": entry.seq}))?;
        Ok((StatusCode::CREATED, Json(json!({"topic_id": topic_id, "entry": entry, "status": status}))).into_response())
    })
}
