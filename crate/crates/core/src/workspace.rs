//! One tenant's diagrams, resources and runs, driven together.
//!
//! Logs are the truth. The run index here is a cache that `rebuild_index`
//! recomputes by replaying every log in the workspace.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use crate::cohort::{self, CohortError, Metric, MetricSample, Planned, Query, QueryStats, Resource, Resources, TagChange, Trigger};
use crate::diagram::{self, Diagram};
use crate::gfl::{self, Declaration};
use crate::predicate::EvalError;
use crate::runtime::clock::parse_rfc3339;
use crate::runtime::{
    self, Adapters, BoundaryCall, Effects, EngineError, Listener, ListenerKind, Match, Replay, RunConfig, RunStatus, RunView, Signal,
    StartRequest, VirtualClock,
};
use crate::store::{EventKind, EventRecord, EventStore, StoreError};
use crate::value::Value;
use crate::verifier::AutomationLibrary;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkspaceError {
    #[error("unknown diagram {0}")]
    UnknownDiagram(String),
    #[error("unknown query {0}")]
    UnknownQuery(String),
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("unknown trigger {0}")]
    UnknownTrigger(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("diagram {slug}: {detail}")]
    Structure { slug: String, detail: String },
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl From<StoreError> for WorkspaceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::RunUnknown(r) => WorkspaceError::UnknownRun(r),
            e => WorkspaceError::Engine(EngineError::Store(e)),
        }
    }
}

/// Index entry for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub slug: String,
    pub content_hash: String,
    pub status: String,
    pub listener: Option<Listener>,
    /// When the current listener was armed.
    pub armed_at: Option<String>,
    pub last_seq: u64,
    pub started_at: String,
    pub subject: Option<String>,
    pub bindings: BTreeMap<String, String>,
}

/// A pending human boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Task {
    pub run_id: String,
    pub node_id: String,
    pub label: String,
    pub node_type: String,
    pub lane: String,
    pub choices: Vec<String>,
    /// Lane key to bound contact id.
    pub contacts: BTreeMap<String, String>,
    pub armed_at: Option<String>,
}

/// Something the workspace did that is not a run event.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Journal {
    Tag(TagChange),
    AssignmentSkipped { trigger: String, resource: String, error: String },
    StartFailed { trigger: String, resource: String, error: String },
    Sample { metric: String, sample: MetricSample },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FireReport {
    pub started: Vec<String>,
    pub blocked: Vec<String>,
    pub skipped: Vec<String>,
    /// Runs whose start was rejected (the resource, the error).
    pub failed: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickReport {
    pub timers: Vec<String>,
    pub triggers: BTreeMap<String, FireReport>,
    pub samples: BTreeMap<String, MetricSample>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagOutcome {
    pub change: Option<TagChange>,
    pub resumed: Vec<RunView>,
}

struct WsEffects<'a> {
    adapters: &'a mut Adapters,
    resources: &'a Resources,
    clock: &'a mut VirtualClock,
    persisted: &'a mut BTreeMap<String, Value>,
    calls: &'a mut u64,
    actor: Option<&'a str>,
}

impl Effects for WsEffects<'_> {
    fn invoke(&mut self, call: &BoundaryCall<'_>) -> Result<Value, String> {
        *self.calls += 1;
        self.adapters.invoke(call)
    }

    fn has_tag(&self, resource: &Value, tag: &str) -> Result<bool, EvalError> {
        crate::predicate::ResourceContext::has_tag(self.resources, resource, tag)
    }

    fn persist(&mut self, record: &Value, key: &str) -> Result<String, String> {
        let id = match crate::predicate::eval::resource_id(record) {
            Some(id) => id.to_string(),
            None => format!("obj-{}", &key[..key.len().min(12)]),
        };
        self.persisted.insert(id.clone(), record.clone());
        Ok(id)
    }

    fn now(&self) -> String {
        self.clock.rfc3339()
    }

    fn backoff(&mut self, ms: u64) {
        self.clock.advance_ms(ms as i64);
    }

    fn actor(&self) -> Option<String> {
        self.actor.map(String::from)
    }
}

pub struct Workspace {
    pub name: String,
    pub store: Box<dyn EventStore + Send>,
    pub diagrams: BTreeMap<String, Arc<Diagram>>,
    pub queries: BTreeMap<String, Query>,
    pub metrics: BTreeMap<String, Metric>,
    pub triggers: BTreeMap<String, Trigger>,
    pub resources: Resources,
    pub adapters: Adapters,
    pub clock: VirtualClock,
    pub config: RunConfig,
    pub library: AutomationLibrary,
    pub persisted: BTreeMap<String, Value>,
    pub journal: Vec<Journal>,
    /// Adapter invocations across every live call.
    pub adapter_calls: u64,
    /// Recorded on signals delivered while set.
    pub actor: Option<String>,
    /// Last run of each scheduled trigger or metric.
    pub last_job: BTreeMap<String, DateTime<Utc>>,
    runs: BTreeMap<String, RunSummary>,
    tag_waiters: BTreeMap<String, BTreeSet<String>>,
    next_run: u64,
}

impl Workspace {
    pub fn new(name: &str, mut store: Box<dyn EventStore + Send>, adapters: Adapters) -> Result<Self, WorkspaceError> {
        store.create_workspace(name)?;
        let mut ws = Workspace {
            name: name.to_string(),
            store,
            diagrams: BTreeMap::new(),
            queries: BTreeMap::new(),
            metrics: BTreeMap::new(),
            triggers: BTreeMap::new(),
            resources: Resources::new(),
            adapters,
            clock: VirtualClock::default(),
            config: RunConfig::default(),
            library: AutomationLibrary::new(),
            persisted: BTreeMap::new(),
            journal: Vec::new(),
            adapter_calls: 0,
            actor: None,
            last_job: BTreeMap::new(),
            runs: BTreeMap::new(),
            tag_waiters: BTreeMap::new(),
            next_run: 1,
        };
        ws.rebuild_index()?;
        Ok(ws)
    }

    /// Adds every diagram, query, metric and trigger in `decls`.
    pub fn load(&mut self, decls: &[Declaration]) -> Result<(), WorkspaceError> {
        for d in decls.iter().filter(|d| d.as_diagram().is_some()) {
            let built = diagram::build(d).map_err(|es| WorkspaceError::Structure {
                slug: d.slug.clone(),
                detail: es.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            })?;
            self.diagrams.insert(d.slug.clone(), Arc::new(built));
        }
        let (qs, ms, ts) = cohort::collect(decls);
        self.queries.extend(qs.into_iter().map(|q| (q.slug.clone(), q)));
        self.metrics.extend(ms.into_iter().map(|m| (m.slug.clone(), m)));
        self.triggers.extend(ts.into_iter().map(|t| (t.slug.clone(), t)));
        Ok(())
    }

    pub fn load_source(&mut self, text: &str) -> Result<(), WorkspaceError> {
        let decls = gfl::parse_str(text).map_err(|e| WorkspaceError::Parse(e.to_string()))?;
        self.load(&decls)
    }

    pub fn diagram(&self, slug: &str) -> Result<&Arc<Diagram>, WorkspaceError> {
        self.diagrams.get(slug).ok_or_else(|| WorkspaceError::UnknownDiagram(slug.to_string()))
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Recomputes the run index from the logs.
    pub fn rebuild_index(&mut self) -> Result<(), WorkspaceError> {
        self.runs.clear();
        self.tag_waiters.clear();
        let ids = self.store.run_ids(&self.name)?;
        for id in ids {
            if let Some(n) = id.strip_prefix("run-").and_then(|n| n.parse::<u64>().ok()) {
                self.next_run = self.next_run.max(n + 1);
            }
            // A crash before the first record was durable: the start never
            // returned, so there is no run. The id stays reserved.
            let records = match self.store.read(&self.name, &id, 1) {
                Ok(r) if r.is_empty() => continue,
                Ok(r) => r,
                Err(StoreError::RunUnknown(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            match runtime::replay_records(&id, &records, &self.diagrams, runtime::Origin::Start) {
                Ok(r) => self.index(&r.view, &records),
                // Diagram not loaded yet: keep a stub so the id stays reserved.
                Err(_) => self.index_stub(&id, &records),
            }
        }
        Ok(())
    }

    fn index_stub(&mut self, id: &str, records: &[EventRecord]) {
        let first = records.first();
        let slug = first.and_then(|r| r.payload.pointer("/diagram/slug")).and_then(|v| v.as_str()).unwrap_or("").to_string();
        self.runs.insert(id.to_string(), RunSummary {
            run_id: id.to_string(),
            slug,
            content_hash: String::new(),
            status: runtime::status_hint(records).to_string(),
            listener: None,
            armed_at: None,
            last_seq: records.last().map_or(0, |r| r.seq),
            started_at: first.map(|r| r.at.clone()).unwrap_or_default(),
            subject: None,
            bindings: BTreeMap::new(),
        });
    }

    fn index(&mut self, v: &RunView, records: &[EventRecord]) {
        if let Some(old) = self.runs.get(&v.run_id) {
            if let Some(ListenerKind::Tag { resource, .. }) = old.listener.as_ref().map(|l| &l.kind) {
                if let Some(s) = self.tag_waiters.get_mut(resource) {
                    s.remove(&v.run_id);
                }
            }
        }
        let listener = v.status.listener().cloned();
        if let Some(ListenerKind::Tag { resource, .. }) = listener.as_ref().map(|l| &l.kind) {
            self.tag_waiters.entry(resource.clone()).or_default().insert(v.run_id.clone());
        }
        let armed_at = listener.as_ref().and_then(|l| {
            records
                .iter()
                .rev()
                .find(|r| r.kind == EventKind::ListenerArmed && r.payload.get("listener_id").and_then(|x| x.as_str()) == Some(&l.id))
                .map(|r| r.at.clone())
        });
        let start = records.first();
        let sub = |p: &str| start.and_then(|r| r.payload.pointer(p));
        let bindings = sub("/bindings")
            .and_then(|b| b.as_object())
            .map(|m| m.iter().filter_map(|(k, c)| Some((k.clone(), c.get("id")?.as_str()?.to_string()))).collect())
            .unwrap_or_default();
        self.runs.insert(v.run_id.clone(), RunSummary {
            run_id: v.run_id.clone(),
            slug: v.slug.clone(),
            content_hash: v.content_hash.clone(),
            status: v.status.name().to_string(),
            listener,
            armed_at,
            last_seq: v.last_seq,
            started_at: start.map(|r| r.at.clone()).unwrap_or_default(),
            subject: sub("/subject/id").and_then(|s| s.as_str()).map(String::from),
            bindings,
        });
    }

    fn reindex(&mut self, v: &RunView) -> Result<(), WorkspaceError> {
        let records = self.store.read(&self.name, &v.run_id, 1)?;
        self.index(v, &records);
        Ok(())
    }

    fn effects(&mut self) -> (&mut dyn EventStore, WsEffects<'_>) {
        (
            &mut *self.store,
            WsEffects {
                adapters: &mut self.adapters,
                resources: &self.resources,
                clock: &mut self.clock,
                persisted: &mut self.persisted,
                calls: &mut self.adapter_calls,
                actor: self.actor.as_deref(),
            },
        )
    }

    pub fn next_run_id(&mut self) -> String {
        let id = format!("run-{:06}", self.next_run);
        self.next_run += 1;
        id
    }

    /// Starts a run of `slug`. The workspace run config applies unless the
    /// request carries its own.
    pub fn start(&mut self, slug: &str, mut req: StartRequest) -> Result<RunView, WorkspaceError> {
        let d = self.diagram(slug)?.clone();
        if req.config == RunConfig::default() {
            req.config = self.config;
        }
        let id = self.next_run_id();
        let diagrams = self.diagrams.clone();
        let ws = self.name.clone();
        let (store, mut fx) = self.effects();
        let result = runtime::start_run(store, &ws, &id, &d, &diagrams, &req, &mut fx);
        match result {
            Ok(v) => {
                self.reindex(&v)?;
                Ok(v)
            }
            Err(e) => {
                let records = self.store.read(&self.name, &id, 1).unwrap_or_default();
                if !records.is_empty() {
                    self.index_stub(&id, &records);
                }
                Err(e.into())
            }
        }
    }

    /// Delivers one signal to one run.
    pub fn signal(&mut self, run_id: &str, signal: &Signal) -> Result<RunView, WorkspaceError> {
        if !self.runs.contains_key(run_id) {
            return Err(WorkspaceError::UnknownRun(run_id.to_string()));
        }
        let diagrams = self.diagrams.clone();
        let ws = self.name.clone();
        let (store, mut fx) = self.effects();
        let v = runtime::deliver(store, &ws, run_id, &diagrams, signal, &mut fx)?;
        self.reindex(&v)?;
        Ok(v)
    }

    /// Continues a run from its log, e.g. after a crash.
    pub fn resume(&mut self, run_id: &str) -> Result<RunView, WorkspaceError> {
        let diagrams = self.diagrams.clone();
        let ws = self.name.clone();
        let (store, mut fx) = self.effects();
        let v = runtime::resume(store, &ws, run_id, &diagrams, &mut fx)?;
        self.reindex(&v)?;
        Ok(v)
    }

    pub fn retry(&mut self, run_id: &str, node: &str) -> Result<RunView, WorkspaceError> {
        let diagrams = self.diagrams.clone();
        let ws = self.name.clone();
        let (store, mut fx) = self.effects();
        let v = runtime::retry_boundary(store, &ws, run_id, node, &diagrams, &mut fx)?;
        self.reindex(&v)?;
        Ok(v)
    }

    pub fn replay(&self, run_id: &str) -> Result<Replay, WorkspaceError> {
        Ok(runtime::replay(&*self.store, &self.name, run_id, &self.diagrams)?)
    }

    pub fn events(&self, run_id: &str, from: u64) -> Result<Vec<EventRecord>, WorkspaceError> {
        Ok(self.store.read(&self.name, run_id, from)?)
    }

    pub fn run(&self, run_id: &str) -> Option<&RunSummary> {
        self.runs.get(run_id)
    }

    pub fn runs(&self, status: Option<&str>) -> impl Iterator<Item = &RunSummary> {
        let status = status.map(String::from);
        self.runs.values().filter(move |r| status.as_ref().is_none_or(|s| &r.status == s))
    }

    pub fn upsert_resource(&mut self, r: Resource) {
        self.resources.upsert(r);
    }

    pub fn add_tag(&mut self, resource: &str, tag: &str) -> Result<TagOutcome, WorkspaceError> {
        let change = self.resources.add_tag(resource, tag)?;
        self.fan_out(change)
    }

    pub fn remove_tag(&mut self, resource: &str, tag: &str) -> Result<TagOutcome, WorkspaceError> {
        let change = self.resources.remove_tag(resource, tag)?;
        self.fan_out(change)
    }

    /// Delivers a tag change to every run whose armed listener it satisfies.
    fn fan_out(&mut self, change: Option<TagChange>) -> Result<TagOutcome, WorkspaceError> {
        let Some(c) = change else { return Ok(TagOutcome::default()) };
        self.journal.push(Journal::Tag(c.clone()));
        let signal = if c.added {
            Signal::TagAdded { resource: c.resource.clone(), tag: c.tag.clone(), tags: c.tags.clone() }
        } else {
            Signal::TagRemoved { resource: c.resource.clone(), tag: c.tag.clone(), tags: c.tags.clone() }
        };
        let waiting: Vec<String> = self.tag_waiters.get(&c.resource).map(|s| s.iter().cloned().collect()).unwrap_or_default();
        let mut resumed = Vec::new();
        for id in waiting {
            let hit = self.runs.get(&id).and_then(|r| r.listener.as_ref()).is_some_and(|l| l.matches(&signal) == Match::Resumes);
            if hit {
                resumed.push(self.signal(&id, &signal)?);
            }
        }
        Ok(TagOutcome { change: Some(c), resumed })
    }

    pub fn query(&self, slug: &str) -> Result<&Query, WorkspaceError> {
        self.queries.get(slug).ok_or_else(|| WorkspaceError::UnknownQuery(slug.to_string()))
    }

    pub fn cohort(&self, slug: &str) -> Result<(BTreeSet<String>, QueryStats), WorkspaceError> {
        Ok(self.query(slug)?.eval(self.resources.iter()))
    }

    pub fn compute_metric(&mut self, slug: &str) -> Result<MetricSample, WorkspaceError> {
        let at = self.clock.rfc3339();
        let m = self.metrics.get_mut(slug).ok_or_else(|| WorkspaceError::UnknownMetric(slug.to_string()))?;
        let q = self.queries.get(&m.query).ok_or_else(|| WorkspaceError::UnknownQuery(m.query.clone()))?;
        let s = m.compute(q, &self.resources, &at);
        self.journal.push(Journal::Sample { metric: slug.to_string(), sample: s.clone() });
        Ok(s)
    }

    /// Starts the trigger's target for each eligible cohort member.
    pub fn fire_trigger(&mut self, slug: &str) -> Result<FireReport, WorkspaceError> {
        let t = self.triggers.get(slug).ok_or_else(|| WorkspaceError::UnknownTrigger(slug.to_string()))?;
        let q = self.queries.get(&t.source_query).ok_or_else(|| WorkspaceError::UnknownQuery(t.source_query.clone()))?;
        let calls = t.calls.clone();
        let auto = t.auto_start;
        let plan = t.plan(q, &self.resources, self.now());
        self.diagram(&calls)?;
        let mut report = FireReport::default();
        for p in plan {
            match p {
                Planned::Blocked { resource } => report.blocked.push(resource),
                Planned::Skipped { resource, error } => {
                    self.journal.push(Journal::AssignmentSkipped { trigger: slug.to_string(), resource: resource.clone(), error: error.to_string() });
                    report.skipped.push(resource);
                }
                Planned::Start { .. } if !auto => {}
                Planned::Start { resource, bindings, subject } => {
                    let req = StartRequest { bindings, subject: Some(subject), ..Default::default() };
                    match self.start(&calls, req) {
                        Ok(v) => {
                            let at = self.clock.rfc3339();
                            self.triggers.get_mut(slug).expect("checked above").record_fire(&resource, &at);
                            report.started.push(v.run_id);
                        }
                        Err(e) => {
                            self.journal.push(Journal::StartFailed { trigger: slug.to_string(), resource: resource.clone(), error: e.to_string() });
                            report.failed.push((resource, e.to_string()));
                        }
                    }
                }
            }
        }
        Ok(report)
    }

    /// Timer listeners whose deadline has passed at `now`.
    pub fn due_timers(&self) -> Vec<(String, String)> {
        let now = self.now();
        self.runs
            .values()
            .filter_map(|r| {
                let l = r.listener.as_ref()?;
                let ListenerKind::Timer { seconds } = l.kind else { return None };
                let armed = parse_rfc3339(r.armed_at.as_deref()?)?;
                let deadline = armed + Duration::milliseconds((seconds * 1000.0) as i64);
                (deadline <= now).then(|| (r.run_id.clone(), l.id.clone()))
            })
            .collect()
    }

    /// Fires due timers, then scheduled triggers, then scheduled metrics.
    pub fn tick(&mut self) -> Result<TickReport, WorkspaceError> {
        let mut report = TickReport::default();
        for (run, listener_id) in self.due_timers() {
            self.signal(&run, &Signal::TimerFired { listener_id })?;
            report.timers.push(run);
        }
        let now = self.now();
        let jobs: Vec<(String, bool)> = self
            .triggers
            .values()
            .filter(|t| t.active)
            .filter_map(|t| Some((t.slug.clone(), t.schedule?)))
            .chain(self.metrics.values().filter_map(|m| Some((m.slug.clone(), m.schedule?))))
            .filter(|(slug, s)| cohort::due(*s, self.last_job.get(slug).copied(), now))
            .map(|(slug, _)| {
                let is_trigger = self.triggers.contains_key(&slug);
                (slug, is_trigger)
            })
            .collect();
        for (slug, is_trigger) in jobs {
            self.last_job.insert(slug.clone(), now);
            if is_trigger {
                let r = self.fire_trigger(&slug)?;
                report.triggers.insert(slug, r);
            } else {
                let s = self.compute_metric(&slug)?;
                report.samples.insert(slug, s);
            }
        }
        Ok(report)
    }

    /// Pending human decisions, optionally for one assignee: a lane key, an
    /// assigned lane, or a bound contact id.
    pub fn tasks(&self, assignee: Option<&str>) -> Vec<Task> {
        self.runs
            .values()
            .filter_map(|r| {
                let l = r.listener.as_ref().filter(|l| l.kind.is_human())?;
                let d = self.diagrams.get(&r.slug)?;
                let node = d.node(&l.node);
                let lane = node.map(|n| n.lane.clone()).unwrap_or_default();
                let mut lanes: Vec<String> = alloc::vec![lane.clone()];
                lanes.extend(node.and_then(|n| n.assigned.clone()).unwrap_or_default());
                let ok = assignee.is_none_or(|a| lanes.iter().any(|k| k == a || r.bindings.get(k).is_some_and(|c| c == a)));
                ok.then(|| Task {
                    run_id: r.run_id.clone(),
                    node_id: l.node.clone(),
                    label: node.map(|n| n.label.clone()).unwrap_or_default(),
                    node_type: node.map(|n| n.node_type.name().to_string()).unwrap_or_default(),
                    lane,
                    choices: l.kind.choices().into_iter().map(String::from).collect(),
                    contacts: r.bindings.clone(),
                    armed_at: r.armed_at.clone(),
                })
            })
            .collect()
    }

    /// Current status of a run, from the index.
    pub fn status(&self, run_id: &str) -> Option<&str> {
        self.runs.get(run_id).map(|r| r.status.as_str())
    }

    pub fn is_waiting(v: &RunView) -> bool {
        matches!(v.status, RunStatus::Waiting(_) | RunStatus::Paused(_))
    }
}
