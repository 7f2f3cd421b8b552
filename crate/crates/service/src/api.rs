use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dedupsec::ingest::{assemble_dataset, parse_report_value};
use dedupsec::{ClusterSet, Dataset, Finding, FindingId, TestingType};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ServiceError;
use crate::model::{diff_sessions, ReasonTag, Session, Verdict};
use crate::store::Store;

pub type AppState = Arc<Store>;

/// JSON body extractor that reports malformed bodies in the service's
/// error format.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e| ServiceError::InvalidRequest(e.body_text()))
    }
}

pub fn router(store: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/findings", get(findings))
        .route("/sessions/{id}/reports", post(add_reports))
        .route("/sessions/{id}/assign", post(assign))
        .route("/sessions/{id}/unassigned", get(unassigned))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/reasons", get(reasons).post(add_reason))
        .route("/sessions/{id}/review", post(open_review).get(review_items))
        .route("/sessions/{id}/review/summary", get(review_summary))
        .route("/sessions/{id}/review/{n}/tag", post(tag_item))
        .route("/sessions/{a}/diff/{b}", get(diff))
        .fallback(|| async { ServiceError::InvalidRequest("no such endpoint".into()) })
        .with_state(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub testing_type: TestingType,
    pub findings: usize,
    pub unassigned: usize,
    pub clusters: BTreeMap<String, Vec<FindingId>>,
    pub created_at: String,
    pub updated_at: String,
}

impl From<&Session> for SessionSummary {
    fn from(s: &Session) -> Self {
        SessionSummary {
            session_id: s.session_id.clone(),
            testing_type: s.dataset.testing_type,
            findings: s.dataset.len(),
            unassigned: s.unassigned().len(),
            clusters: s
                .named_clusters
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
                .collect(),
            created_at: s.created_at.clone(),
            updated_at: s.updated_at.clone(),
        }
    }
}

#[derive(Deserialize)]
pub struct ReportUpload {
    pub tool: String,
    pub report: Value,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CreateBody {
    Reports {
        testing_type: TestingType,
        reports: Vec<ReportUpload>,
    },
    Dataset(Dataset),
}

async fn create_session(
    State(store): State<AppState>,
    ApiJson(body): ApiJson<Value>,
) -> Result<(StatusCode, Json<SessionSummary>), ServiceError> {
    let body: CreateBody = serde_json::from_value(body).map_err(|e| ServiceError::InvalidDataset(e.to_string()))?;
    let dataset = match body {
        CreateBody::Dataset(d) => d,
        CreateBody::Reports { testing_type, reports } => dataset_from_reports(&store, testing_type, &reports)?,
    };
    let session = store.create(dataset)?;
    Ok((StatusCode::CREATED, Json(SessionSummary::from(&session))))
}

fn dataset_from_reports(
    store: &Store,
    testing_type: TestingType,
    reports: &[ReportUpload],
) -> Result<Dataset, ServiceError> {
    let mut next_id = 1;
    let mut parsed: Vec<(String, Vec<Finding>)> = Vec::new();
    for r in reports {
        let mapping = store
            .catalog()
            .iter()
            .find(|m| m.tool_name == r.tool)
            .ok_or_else(|| ServiceError::UnknownTool(r.tool.clone()))?;
        let findings = parse_report_value(&r.report, r.source.as_deref().unwrap_or(&r.tool), mapping, next_id)
            .map_err(|e| ServiceError::InvalidDataset(e.to_string()))?;
        next_id += findings.len() as u64;
        parsed.push((r.tool.clone(), findings));
    }
    assemble_dataset(parsed, testing_type).map_err(|e| ServiceError::InvalidDataset(e.to_string()))
}

async fn list_sessions(State(store): State<AppState>) -> Json<Value> {
    Json(json!({ "sessions": store.session_ids() }))
}

async fn session_summary(
    State(store): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionSummary>, ServiceError> {
    store.read(&id, |s| Json(SessionSummary::from(s)))
}

async fn findings(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<Dataset>, ServiceError> {
    store.read(&id, |s| Json(s.dataset.clone()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReportsBody {
    Many { reports: Vec<ReportUpload> },
    One(ReportUpload),
}

async fn add_reports(
    State(store): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<Value>,
) -> Result<Json<Value>, ServiceError> {
    let body: ReportsBody = serde_json::from_value(body)
        .map_err(|_| ServiceError::InvalidRequest("expected {\"tool\", \"report\"} or {\"reports\": [...]}".into()))?;
    let uploads = match body {
        ReportsBody::Many { reports } => reports,
        ReportsBody::One(r) => vec![r],
    };
    let mut added = 0;
    for r in &uploads {
        added += store.add_report(&id, &r.tool, &r.report, r.source.as_deref())?;
    }
    let summary = store.read(&id, |s| SessionSummary::from(s))?;
    Ok(Json(json!({ "added": added, "session": summary })))
}

#[derive(Deserialize)]
struct AssignBody {
    cluster: String,
    finding_ids: BTreeSet<FindingId>,
}

async fn assign(
    State(store): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<AssignBody>,
) -> Result<Json<SessionSummary>, ServiceError> {
    store.assign(&id, &body.cluster, &body.finding_ids)?;
    store.read(&id, |s| Json(SessionSummary::from(s)))
}

async fn unassigned(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ServiceError> {
    store.read(&id, |s| Json(json!({ "finding_ids": s.unassigned() })))
}

async fn export(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<ClusterSet>, ServiceError> {
    store.read(&id, Session::ground_truth)?.map(Json)
}

async fn reasons(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<ReasonTag>>, ServiceError> {
    store.read(&id, |s| Json(s.reasons()))
}

#[derive(Deserialize)]
struct ReasonBody {
    text: String,
}

async fn add_reason(
    State(store): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<ReasonBody>,
) -> Result<(StatusCode, Json<ReasonTag>), ServiceError> {
    Ok((StatusCode::CREATED, Json(store.add_reason(&id, &body.text)?)))
}

async fn open_review(
    State(store): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<Value>,
) -> Result<Json<Value>, ServiceError> {
    let predicted =
        ClusterSet::from_json_str(&body.to_string()).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
    let review = store.open_review(&id, predicted)?;
    Ok(Json(json!({ "items": review.items })))
}

async fn review_items(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ServiceError> {
    store
        .read(&id, |s| s.review.as_ref().map(|r| Json(json!({ "items": r.items }))))?
        .ok_or(ServiceError::NoReview)
}

#[derive(Deserialize)]
struct TagBody {
    #[serde(default = "default_verdict")]
    verdict: Verdict,
    reasons: BTreeSet<u32>,
}

fn default_verdict() -> Verdict {
    Verdict::Incorrect
}

async fn tag_item(
    State(store): State<AppState>,
    Path((id, n)): Path<(String, usize)>,
    ApiJson(body): ApiJson<TagBody>,
) -> Result<Json<Value>, ServiceError> {
    let item = store.tag(&id, n, body.verdict, &body.reasons)?;
    Ok(Json(json!(item)))
}

#[derive(Deserialize)]
struct SummaryQuery {
    format: Option<String>,
}

async fn review_summary(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SummaryQuery>,
) -> Result<Response, ServiceError> {
    let (rows, pending, tagged) = store.read(&id, |s| {
        let counts = s.reason_counts();
        let rows: Vec<Value> = s
            .reasons()
            .into_iter()
            .map(|r| json!({ "reason_id": r.reason_id, "text": r.text, "count": counts[&r.reason_id] }))
            .collect();
        let items = s.review.as_ref().map(|r| r.items.as_slice()).unwrap_or_default();
        let pending = items.iter().filter(|i| i.verdict == Verdict::Pending).count();
        (rows, pending, items.len() - pending)
    })?;
    if q.format.as_deref() == Some("csv") {
        let mut out = String::from("reason_id,count\n");
        for r in &rows {
            out.push_str(&format!("{},{}\n", r["reason_id"], r["count"]));
        }
        return Ok(([(header::CONTENT_TYPE, "text/csv")], out).into_response());
    }
    Ok(Json(json!({ "reasons": rows, "pending": pending, "tagged": tagged })).into_response())
}

async fn diff(
    State(store): State<AppState>,
    Path((a, b)): Path<(String, String)>,
) -> Result<Json<Value>, ServiceError> {
    let sa = store.read(&a, Session::clone)?;
    let sb = store.read(&b, Session::clone)?;
    Ok(Json(json!({ "disagreements": diff_sessions(&sa, &sb)? })))
}
