//! JSON API for the dashboard. Every route exists under
//! `/workspaces/{ws}/...` and, for the `default` workspace, at the root.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, RawPathParams, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{Duration, SecondsFormat};
use graphflow_core::diagram::interchange;
use graphflow_core::runtime::EngineError;
use graphflow_core::store::StoreError;
use graphflow_core::workspace::WorkspaceError;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::ops::{self, SignalSpec};
use crate::site::{Site, SiteError};

pub const DEFAULT_WORKSPACE: &str = "default";

pub type Shared = Arc<Mutex<Site>>;

pub struct ApiError(SiteError);

impl From<SiteError> for ApiError {
    fn from(e: SiteError) -> Self {
        ApiError(e)
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        ApiError(e.into())
    }
}

/// Status and stable error kind for an error.
pub fn classify(e: &SiteError) -> (StatusCode, &'static str) {
    use WorkspaceError as W;
    match e {
        SiteError::BadName(_) | SiteError::Invalid(_) | SiteError::Parse(_) => (StatusCode::BAD_REQUEST, "validation"),
        SiteError::NoSuchDiagram(_) => (StatusCode::NOT_FOUND, "not-found"),
        SiteError::Rejected(_) => (StatusCode::BAD_REQUEST, "rejected"),
        SiteError::RootLocked(_) => (StatusCode::CONFLICT, "locked"),
        SiteError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        SiteError::Workspace(w) => match w {
            W::UnknownDiagram(_) | W::UnknownQuery(_) | W::UnknownMetric(_) | W::UnknownTrigger(_) | W::UnknownRun(_) => (StatusCode::NOT_FOUND, "not-found"),
            W::Cohort(graphflow_core::cohort::CohortError::UnknownResource(_)) => (StatusCode::NOT_FOUND, "not-found"),
            W::Parse(_) | W::Structure { .. } | W::Cohort(_) => (StatusCode::BAD_REQUEST, "validation"),
            W::Engine(e) => match e {
                EngineError::StaleSignal(_) => (StatusCode::CONFLICT, "stale-signal"),
                EngineError::SignalMismatch(_) => (StatusCode::CONFLICT, "signal-mismatch"),
                EngineError::NotRetryable(_) => (StatusCode::CONFLICT, "not-retryable"),
                EngineError::Validation(_) | EngineError::PreconditionViolation { .. } => (StatusCode::BAD_REQUEST, "validation"),
                EngineError::UnknownArtifact(_) => (StatusCode::NOT_FOUND, "not-found"),
                EngineError::Store(StoreError::RunUnknown(_) | StoreError::WorkspaceUnknown(_)) => (StatusCode::NOT_FOUND, "not-found"),
                EngineError::Store(StoreError::Locked(_)) => (StatusCode::CONFLICT, "locked"),
                EngineError::ReplayDivergence { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "replay-divergence"),
                _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
        },
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        let mut body = json!({"error": kind, "message": self.0.to_string()});
        if let SiteError::Rejected(r) = &self.0 {
            body["report"] = serde_json::to_value(&**r).unwrap_or(Value::Null);
        }
        (status, axum::Json(body)).into_response()
    }
}

type ApiResult = Result<axum::Json<Value>, ApiError>;

fn params(raw: &RawPathParams) -> HashMap<String, String> {
    raw.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn ws_of(p: &HashMap<String, String>) -> &str {
    p.get("ws").map_or(DEFAULT_WORKSPACE, String::as_str)
}

fn param<'a>(p: &'a HashMap<String, String>, k: &str) -> &'a str {
    p.get(k).map_or("", String::as_str)
}

/// Unknown workspaces are 404 on reads rather than created.
fn existing(site: &Site, ws: &str) -> Result<(), ApiError> {
    if ws == DEFAULT_WORKSPACE || site.exists(ws) {
        Ok(())
    } else {
        Err(ApiError(SiteError::Workspace(WorkspaceError::Engine(EngineError::Store(StoreError::WorkspaceUnknown(ws.to_string()))))))
    }
}

fn lock(s: &Shared) -> std::sync::MutexGuard<'_, Site> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

async fn workspaces(State(s): State<Shared>) -> ApiResult {
    Ok(axum::Json(json!({ "workspaces": lock(&s).workspace_names() })))
}

#[derive(Deserialize)]
struct StatusFilter {
    status: Option<String>,
}

async fn runs(State(s): State<Shared>, raw: RawPathParams, Query(q): Query<StatusFilter>) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    let runs: Vec<_> = w.runs(q.status.as_deref()).cloned().collect();
    Ok(axum::Json(json!({ "runs": runs })))
}

#[derive(Deserialize)]
struct Viewer {
    lane: Option<String>,
}

async fn run(State(s): State<Shared>, raw: RawPathParams, Query(q): Query<Viewer>) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    Ok(axum::Json(ops::run_detail(w, param(&p, "id"), q.lane.as_deref())?))
}

#[derive(Deserialize)]
struct FromSeq {
    from: Option<u64>,
}

async fn events(State(s): State<Shared>, raw: RawPathParams, Query(q): Query<FromSeq>) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    let id = param(&p, "id");
    if w.run(id).is_none() {
        return Err(WorkspaceError::UnknownRun(id.to_string()).into());
    }
    let records: Vec<Value> = w.events(id, q.from.unwrap_or(1))?.iter().map(ops::event_json).collect();
    Ok(axum::Json(json!({ "events": records })))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct SignalBody {
    kind: String,
    node_id: Option<String>,
    choice: Option<String>,
    tag: Option<String>,
    resource: Option<String>,
    #[serde(default)]
    actor: String,
}

fn spec_of(b: &SignalBody) -> Result<SignalSpec, SiteError> {
    let need = |v: &Option<String>, what: &str| v.clone().ok_or_else(|| SiteError::Invalid(format!("{} signals need {what}", b.kind)));
    Ok(match b.kind.as_str() {
        "decision" => SignalSpec::Decision { node: b.node_id.clone(), choice: need(&b.choice, "choice")? },
        "tag" => SignalSpec::Tag { tag: need(&b.tag, "tag")?, resource: b.resource.clone(), remove: false },
        "untag" => SignalSpec::Tag { tag: need(&b.tag, "tag")?, resource: b.resource.clone(), remove: true },
        "timer" => SignalSpec::Timer,
        "retry" => SignalSpec::Retry { node: need(&b.node_id, "nodeId")? },
        other => return Err(SiteError::Invalid(format!("unknown signal kind {other:?}"))),
    })
}

async fn signal(State(s): State<Shared>, raw: RawPathParams, body: Result<axum::Json<SignalBody>, axum::extract::rejection::JsonRejection>) -> ApiResult {
    let p = params(&raw);
    let axum::Json(b) = body.map_err(|e| SiteError::Invalid(e.body_text()))?;
    let spec = spec_of(&b)?;
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let v = ops::signal(&mut site, ws_of(&p), param(&p, "id"), &spec, &b.actor)?;
    Ok(axum::Json(ops::view_json(&v)))
}

async fn diagrams(State(s): State<Shared>, raw: RawPathParams) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    let list: Vec<Value> = w
        .diagrams
        .values()
        .map(|d| {
            let admitted = w.library.get(&d.slug, &d.content_hash).map(|a| a.id.clone());
            json!({"slug": d.slug, "name": d.name, "content_hash": d.content_hash, "automation": admitted})
        })
        .collect();
    Ok(axum::Json(json!({ "diagrams": list })))
}

async fn diagram(State(s): State<Shared>, raw: RawPathParams) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    Ok(axum::Json(interchange::export(w.diagram(param(&p, "slug"))?)))
}

#[derive(Deserialize)]
struct StartBody {
    #[serde(default)]
    inputs: BTreeMap<String, Value>,
    #[serde(default)]
    bindings: BTreeMap<String, Value>,
    #[serde(default)]
    actor: String,
}

async fn start(State(s): State<Shared>, raw: RawPathParams, body: Result<axum::Json<StartBody>, axum::extract::rejection::JsonRejection>) -> Result<(StatusCode, axum::Json<Value>), ApiError> {
    let p = params(&raw);
    let axum::Json(b) = body.map_err(|e| SiteError::Invalid(e.body_text()))?;
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let v = ops::start(&mut site, ws_of(&p), param(&p, "slug"), &b.inputs, &b.bindings, &b.actor)?;
    Ok((StatusCode::CREATED, axum::Json(ops::view_json(&v))))
}

async fn cohort(State(s): State<Shared>, raw: RawPathParams) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    let (members, stats) = w.cohort(param(&p, "slug"))?;
    Ok(axum::Json(json!({"query": param(&p, "slug"), "count": members.len(), "members": members, "stats": stats})))
}

#[derive(Deserialize)]
struct Window {
    window: Option<String>,
}

/// `24h`, `7d` or `2w` back from now.
fn window_start(now: chrono::DateTime<chrono::Utc>, w: &str) -> Result<String, SiteError> {
    let bad = || SiteError::Invalid(format!("window {w:?} is not like 24h, 7d or 2w"));
    let (n, unit) = w.split_at(w.len().checked_sub(1).ok_or_else(bad)?);
    let n: i64 = n.parse().map_err(|_| bad())?;
    let d = match unit {
        "h" => Duration::hours(n),
        "d" => Duration::days(n),
        "w" => Duration::weeks(n),
        _ => return Err(bad()),
    };
    Ok((now - d).to_rfc3339_opts(SecondsFormat::Millis, true))
}

async fn samples(State(s): State<Shared>, raw: RawPathParams, Query(q): Query<Window>) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    let slug = param(&p, "slug");
    let m = w.metrics.get(slug).ok_or_else(|| WorkspaceError::UnknownMetric(slug.to_string()))?;
    let from = q.window.as_deref().map(|x| window_start(w.now(), x)).transpose()?;
    let samples: Vec<_> = m.window(from.as_deref(), None).into_iter().cloned().collect();
    Ok(axum::Json(json!({"metric": slug, "aggregation": m.aggregation.name(), "samples": samples})))
}

#[derive(Deserialize)]
struct Assignee {
    assignee: Option<String>,
}

async fn tasks(State(s): State<Shared>, raw: RawPathParams, Query(q): Query<Assignee>) -> ApiResult {
    let p = params(&raw);
    let mut site = lock(&s);
    existing(&site, ws_of(&p))?;
    let w = site.workspace(ws_of(&p))?;
    Ok(axum::Json(json!({ "tasks": w.tasks(q.assignee.as_deref()) })))
}

fn scoped() -> Router<Shared> {
    Router::new()
        .route("/runs", get(runs))
        .route("/runs/{id}", get(run))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/signal", post(signal))
        .route("/diagrams", get(diagrams))
        .route("/diagrams/{slug}", get(diagram))
        .route("/diagrams/{slug}/runs", post(start))
        .route("/queries/{slug}/cohort", get(cohort))
        .route("/metrics/{slug}/samples", get(samples))
        .route("/tasks", get(tasks))
}

pub fn router(site: Shared) -> Router {
    Router::new().route("/workspaces", get(workspaces)).nest("/workspaces/{ws}", scoped()).merge(scoped()).with_state(site)
}

/// Serves until ctrl-c.
pub async fn serve(site: Shared, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(site)).with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
