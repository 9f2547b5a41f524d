//! Operations shared by the CLI and the HTTP service, so both write the
//! same events for the same request.

use std::collections::BTreeMap;

use graphflow_core::cohort::CohortError;
use graphflow_core::diagram::Diagram;
use graphflow_core::runtime::{EngineError, ListenerKind, RunView, Signal, StartRequest};
use graphflow_core::store::EventRecord;
use graphflow_core::workspace::{Workspace, WorkspaceError};
use graphflow_core::{State, Value};
use serde_json::{json, Value as Json};

use crate::site::{Site, SiteError};

pub const REDACTED: &str = "[redacted]";

/// What a signal request asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSpec {
    /// `node` defaults to the node the run waits at.
    Decision { node: Option<String>, choice: String },
    /// `resource` defaults to the resource the run's tag wait watches.
    Tag { tag: String, resource: Option<String>, remove: bool },
    Timer,
    Retry { node: String },
}

/// A contact id resolves through the workspace's resources; an object is
/// taken as the contact record itself.
pub fn binding(ws: &Workspace, contact: &Json) -> Result<Value, SiteError> {
    match contact {
        Json::String(id) => {
            let r = ws.resources.get(id).ok_or_else(|| WorkspaceError::Cohort(CohortError::UnknownResource(id.clone())))?;
            Ok(r.contact_record())
        }
        Json::Object(_) => Ok(Value::from_json(contact)),
        other => Err(SiteError::Invalid(format!("binding must be a contact id or record, got {other}"))),
    }
}

/// `k=v` where `v` is JSON when it parses, else a string.
pub fn parse_assignment(s: &str) -> Result<(String, Json), SiteError> {
    let (k, v) = s.split_once('=').ok_or_else(|| SiteError::Invalid(format!("expected key=value, got {s:?}")))?;
    let v = serde_json::from_str(v).unwrap_or_else(|_| Json::String(v.to_string()));
    Ok((k.trim().to_string(), v))
}

fn require_actor(actor: &str) -> Result<(), SiteError> {
    if actor.trim().is_empty() {
        return Err(SiteError::Invalid("an actor is required".into()));
    }
    Ok(())
}

pub fn start(site: &mut Site, ws: &str, slug: &str, inputs: &BTreeMap<String, Json>, bindings: &BTreeMap<String, Json>, actor: &str) -> Result<RunView, SiteError> {
    require_actor(actor)?;
    let w = site.workspace(ws)?;
    let mut req = StartRequest { inputs: inputs.iter().map(|(k, v)| (k.clone(), Value::from_json(v))).collect(), ..Default::default() };
    for (lane, c) in bindings {
        req.bindings.insert(lane.clone(), binding(w, c)?);
    }
    let v = w.start(slug, req);
    site.save(ws)?;
    Ok(v?)
}

pub fn signal(site: &mut Site, ws: &str, run_id: &str, spec: &SignalSpec, actor: &str) -> Result<RunView, SiteError> {
    require_actor(actor)?;
    let w = site.workspace(ws)?;
    let summary = w.run(run_id).cloned().ok_or_else(|| WorkspaceError::UnknownRun(run_id.to_string()))?;
    let terminal = matches!(summary.status.as_str(), "completed" | "errored");
    if terminal && !matches!(spec, SignalSpec::Retry { .. }) {
        return Err(WorkspaceError::Engine(EngineError::StaleSignal(run_id.to_string())).into());
    }
    let listener = summary.listener.clone();
    w.actor = Some(actor.to_string());
    let result = match spec {
        SignalSpec::Decision { node, choice } => {
            let node_id = node.clone().or_else(|| listener.as_ref().map(|l| l.node.clone())).unwrap_or_default();
            w.signal(run_id, &Signal::HumanDecision { node_id, choice: choice.clone(), actor: actor.to_string() }).map(|_| ())
        }
        SignalSpec::Tag { tag, resource, remove } => {
            let watched = match listener.as_ref().map(|l| &l.kind) {
                Some(ListenerKind::Tag { resource, .. }) => Some(resource.clone()),
                _ => None,
            };
            match resource.clone().or(watched) {
                None => Err(WorkspaceError::Engine(EngineError::SignalMismatch(format!("run {run_id} is not waiting on a tag")))),
                Some(r) if *remove => w.remove_tag(&r, tag).map(|_| ()),
                Some(r) => w.add_tag(&r, tag).map(|_| ()),
            }
        }
        SignalSpec::Timer => {
            let listener_id = listener.as_ref().map(|l| l.id.clone()).unwrap_or_default();
            w.signal(run_id, &Signal::TimerFired { listener_id }).map(|_| ())
        }
        SignalSpec::Retry { node } => w.retry(run_id, node).map(|_| ()),
    };
    w.actor = None;
    site.save(ws)?;
    result?;
    let w = site.workspace(ws)?;
    Ok(w.replay(run_id)?.view)
}

/// Keys listed under a lane's `redact` attribute are hidden from everyone
/// but that lane.
pub fn redact(d: Option<&Diagram>, sigma: &State, viewer: Option<&str>) -> Json {
    let mut out = sigma.to_value().to_json();
    let Some(d) = d else { return out };
    for lane in d.lanes.iter().filter(|l| viewer != Some(l.key.as_str())) {
        let Some((_, Value::List(keys))) = lane.attrs.iter().find(|(k, _)| k == "redact") else { continue };
        for k in keys {
            let key = match k {
                Value::Str(s) | Value::Keyword(s) => s.trim_start_matches("$.").to_string(),
                _ => continue,
            };
            if let Some(slot) = out.as_object_mut().and_then(|m| m.get_mut(&key)) {
                *slot = Json::String(REDACTED.into());
            }
        }
    }
    out
}

pub fn event_json(r: &EventRecord) -> Json {
    serde_json::to_value(r).expect("records serialize")
}

/// Everything the run page shows.
pub fn run_detail(w: &Workspace, run_id: &str, viewer: Option<&str>) -> Result<Json, SiteError> {
    let summary = w.run(run_id).ok_or_else(|| WorkspaceError::UnknownRun(run_id.to_string()))?;
    let records = w.events(run_id, 1)?;
    let d = w.diagrams.get(&summary.slug).filter(|d| d.content_hash == summary.content_hash);
    let sigma = match w.replay(run_id) {
        Ok(r) => redact(d.map(|d| &**d), &r.view.sigma, viewer),
        Err(_) => Json::Null,
    };
    let current = summary.listener.as_ref().map(|l| l.node.clone());
    let lane = current.as_ref().and_then(|n| d?.node(n)).map(|n| n.lane.clone());
    let timeline: Vec<Json> = records.iter().map(|r| json!({"seq": r.seq, "at": r.at, "kind": r.kind.name(), "node_id": r.node_id})).collect();
    Ok(json!({
        "run": summary,
        "current_node": current,
        "current_lane": lane,
        "sigma": sigma,
        "timeline": timeline,
    }))
}

pub fn view_json(v: &RunView) -> Json {
    json!({
        "run_id": v.run_id,
        "slug": v.slug,
        "status": v.status.name(),
        "listener": v.status.listener(),
        "last_seq": v.last_seq,
        "return": v.ret().map(Value::to_json),
    })
}
