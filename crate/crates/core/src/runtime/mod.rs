//! Durable event-sourced execution.
//!
//! A run is its event log. Every entry point re-executes the diagram from
//! the logged σ₀ (or the latest checkpoint) against the log: deterministic
//! steps are recomputed and compared with what was recorded, while boundary
//! outcomes, external decisions and signals are read back from the log.
//! Once the log is exhausted a live call keeps going and appends; a replay
//! stops. Replay never holds an adapter, so it cannot invoke one.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diagram::Diagram;
use crate::predicate::EvalError;
use crate::store::{EventKind, EventRecord, EventStore, StoreError};
use crate::value::{State, Value};

pub mod adapter;
pub mod builtins;
pub mod clock;
mod exec;
pub mod key;

pub use adapter::{Adapters, BoundaryAdapter, BoundaryCall, FaultSchedule, SimAdapter};
pub use clock::VirtualClock;
pub use key::idempotency_key;

/// Everything a live run may observe or change outside its own log.
pub trait Effects {
    fn invoke(&mut self, call: &BoundaryCall<'_>) -> Result<Value, String>;
    fn has_tag(&self, resource: &Value, tag: &str) -> Result<bool, EvalError>;
    /// Stores a resource record and returns its id.
    fn persist(&mut self, record: &Value, key: &str) -> Result<String, String>;
    /// Timestamp for the `at` field.
    fn now(&self) -> String;
    /// Wait before the next automatic retry.
    fn backoff(&mut self, _ms: u64) {}
    /// Who caused the signals delivered through these effects, if known.
    fn actor(&self) -> Option<String> {
        None
    }
}

/// Resolves diagrams by slug and, when given, content hash.
pub trait DiagramSource {
    fn diagram(&self, slug: &str, hash: Option<&str>) -> Option<Arc<Diagram>>;
}

impl DiagramSource for BTreeMap<String, Arc<Diagram>> {
    fn diagram(&self, slug: &str, hash: Option<&str>) -> Option<Arc<Diagram>> {
        self.get(slug).filter(|d| hash.is_none_or(|h| d.content_hash == h)).cloned()
    }
}

/// In-memory effects: an adapter registry, a tag table and a virtual clock.
pub struct BasicEffects {
    pub adapters: Adapters,
    pub tags: BTreeMap<String, BTreeSet<String>>,
    pub clock: VirtualClock,
    pub persisted: BTreeMap<String, Value>,
    pub invocations: u64,
}

impl BasicEffects {
    pub fn new(adapters: Adapters) -> Self {
        BasicEffects { adapters, tags: BTreeMap::new(), clock: VirtualClock::default(), persisted: BTreeMap::new(), invocations: 0 }
    }

    pub fn simulated(schedule: FaultSchedule) -> Self {
        Self::new(Adapters::simulated(schedule))
    }

    pub fn tag(&mut self, resource: &str, tag: &str) {
        self.tags.entry(resource.to_string()).or_default().insert(tag.to_string());
    }

    pub fn tags_of(&self, resource: &str) -> Vec<String> {
        self.tags.get(resource).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }
}

impl Effects for BasicEffects {
    fn invoke(&mut self, call: &BoundaryCall<'_>) -> Result<Value, String> {
        self.invocations += 1;
        self.adapters.invoke(call)
    }

    fn has_tag(&self, resource: &Value, tag: &str) -> Result<bool, EvalError> {
        let id = crate::predicate::eval::resource_id(resource).ok_or_else(|| EvalError::UnknownResource(resource.to_canonical_string()))?;
        Ok(self.tags.get(id).is_some_and(|t| t.contains(tag)))
    }

    fn persist(&mut self, record: &Value, key: &str) -> Result<String, String> {
        let id = match crate::predicate::eval::resource_id(record) {
            Some(id) => id.to_string(),
            None => alloc::format!("obj-{}", &key[..key.len().min(12)]),
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OnViolation {
    #[default]
    Error,
    Pause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct GuardConfig {
    /// When off, guards are still checked and recorded.
    pub enforce: bool,
    pub on_violation: OnViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 100, multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`.
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        let f = libm::pow(self.multiplier, attempt.saturating_sub(1) as f64);
        (self.base_delay_ms as f64 * f) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    pub guard: GuardConfig,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ListenerKind {
    Tag { resource: String, with: Vec<String>, without: Vec<String> },
    Timer { seconds: f64 },
    Decision { choices: Vec<String> },
    Meeting,
    Guard { phase: String, predicate: String },
    Manual,
}

impl ListenerKind {
    /// Choices a human decision may carry for this listener.
    pub fn choices(&self) -> Vec<&str> {
        match self {
            ListenerKind::Decision { choices } => choices.iter().map(String::as_str).collect(),
            ListenerKind::Meeting | ListenerKind::Manual => alloc::vec!["proceed"],
            ListenerKind::Guard { .. } => alloc::vec!["resume", "retry", "abort"],
            _ => Vec::new(),
        }
    }

    pub fn is_human(&self) -> bool {
        !self.choices().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listener {
    pub id: String,
    /// Node path the run is waiting at.
    pub node: String,
    pub kind: ListenerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "signal", rename_all = "kebab-case")]
pub enum Signal {
    /// `tags` is the resource's full tag set after the change.
    TagAdded { resource: String, tag: String, tags: Vec<String> },
    TagRemoved { resource: String, tag: String, tags: Vec<String> },
    HumanDecision { node_id: String, choice: String, actor: String },
    TimerFired { listener_id: String },
}

/// How a signal relates to an armed listener.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Match {
    Resumes,
    /// Relevant to the listener, recorded, but its condition is not met yet.
    Recorded,
    Mismatch,
}

impl Listener {
    pub fn matches(&self, s: &Signal) -> Match {
        let hit = |b: bool| if b { Match::Resumes } else { Match::Mismatch };
        match (&self.kind, s) {
            (ListenerKind::Tag { resource, with, without }, Signal::TagAdded { resource: r, tags, .. })
            | (ListenerKind::Tag { resource, with, without }, Signal::TagRemoved { resource: r, tags, .. }) => {
                if r != resource {
                    return Match::Mismatch;
                }
                let ok = with.iter().all(|t| tags.contains(t)) && without.iter().all(|t| !tags.contains(t));
                if ok {
                    Match::Resumes
                } else {
                    Match::Recorded
                }
            }
            (ListenerKind::Timer { .. }, Signal::TimerFired { listener_id }) => hit(*listener_id == self.id),
            (k, Signal::HumanDecision { node_id, choice, .. }) if k.is_human() => {
                hit(*node_id == self.node && k.choices().contains(&choice.as_str()))
            }
            _ => Match::Mismatch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Precondition,
    Throw,
    BoundaryFailure,
    EvalError,
    GuardViolation,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub reason: FailureReason,
    pub message: String,
    pub node: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Running,
    Waiting(Listener),
    /// Stopped on a guard violation until an operator decides.
    Paused(Listener),
    Completed,
    Errored(Failure),
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Waiting(_) => "waiting",
            RunStatus::Paused(_) => "paused",
            RunStatus::Completed => "completed",
            RunStatus::Errored(_) => "errored",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Errored(_))
    }

    pub fn listener(&self) -> Option<&Listener> {
        match self {
            RunStatus::Waiting(l) | RunStatus::Paused(l) => Some(l),
            _ => None,
        }
    }
}

/// One completed node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub node: String,
    pub visit: u32,
    pub next: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunView {
    pub run_id: String,
    pub slug: String,
    pub content_hash: String,
    pub status: RunStatus,
    /// Top-level σ at the point the run stopped.
    pub sigma: State,
    pub trace: Vec<Transition>,
    pub last_seq: u64,
    /// Adapter invocations made by this call.
    pub adapter_calls: u64,
}

impl RunView {
    pub fn ret(&self) -> Option<&Value> {
        self.sigma.0.get("return")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub view: RunView,
    /// The log ended before the run reached a terminal or waiting state.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown artifact {0}")]
    UnknownArtifact(String),
    #[error("precondition violated for run {run_id}: {}", failed.join(", "))]
    PreconditionViolation { run_id: String, failed: Vec<String> },
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("run {0} is terminal")]
    StaleSignal(String),
    #[error("signal does not match: {0}")]
    SignalMismatch(String),
    #[error("replay diverged at seq {seq}: {detail}")]
    ReplayDivergence { seq: u64, detail: String },
    #[error("corrupt log: {0}")]
    LogCorruption(String),
    #[error("retries exhausted at node {0}")]
    RetriesExhausted(String),
    #[error("nothing to retry: {0}")]
    NotRetryable(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Inputs to a new run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StartRequest {
    pub inputs: BTreeMap<String, Value>,
    /// Lane key to contact record `{ id, ext-id, ext-type }`.
    pub bindings: BTreeMap<String, Value>,
    pub subject: Option<Value>,
    pub config: RunConfig,
}

/// Where a replay or resume starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Start,
    LatestCheckpoint,
}

pub fn start_run(
    store: &mut dyn EventStore,
    ws: &str,
    run_id: &str,
    diagram: &Arc<Diagram>,
    diagrams: &dyn DiagramSource,
    req: &StartRequest,
    effects: &mut dyn Effects,
) -> Result<RunView, EngineError> {
    exec::start(store, ws, run_id, diagram, diagrams, req, effects)
}

/// Continues a run from its log; used after a crash and after new signals.
pub fn resume(
    store: &mut dyn EventStore,
    ws: &str,
    run_id: &str,
    diagrams: &dyn DiagramSource,
    effects: &mut dyn Effects,
) -> Result<RunView, EngineError> {
    let records = store.read(ws, run_id, 1)?;
    let mut live = exec::Live { store, ws, effects };
    exec::drive(run_id, &records, diagrams, Some(&mut live), Origin::LatestCheckpoint).map(|r| r.view)
}

/// Validates a signal against the armed listener, logs it and continues.
pub fn deliver(
    store: &mut dyn EventStore,
    ws: &str,
    run_id: &str,
    diagrams: &dyn DiagramSource,
    signal: &Signal,
    effects: &mut dyn Effects,
) -> Result<RunView, EngineError> {
    if let Signal::HumanDecision { actor, .. } = signal {
        if actor.trim().is_empty() {
            return Err(EngineError::Validation("an actor is required".into()));
        }
    }
    let records = store.read(ws, run_id, 1)?;
    let state = exec::drive(run_id, &records, diagrams, None, Origin::LatestCheckpoint)?;
    let listener = match &state.view.status {
        s if s.is_terminal() => return Err(EngineError::StaleSignal(run_id.to_string())),
        RunStatus::Waiting(l) | RunStatus::Paused(l) if !state.incomplete => l.clone(),
        s => return Err(EngineError::SignalMismatch(alloc::format!("run is {}", s.name()))),
    };
    if listener.matches(signal) == Match::Mismatch {
        return Err(EngineError::SignalMismatch(alloc::format!("listener {} does not accept {}", listener.id, signal_name(signal))));
    }
    exec::append_signal(store, ws, run_id, &listener, signal, effects.now(), effects.actor())?;
    resume(store, ws, run_id, diagrams, effects)
}

pub fn signal_name(s: &Signal) -> &'static str {
    match s {
        Signal::TagAdded { .. } => "tag-added",
        Signal::TagRemoved { .. } => "tag-removed",
        Signal::HumanDecision { .. } => "human-decision",
        Signal::TimerFired { .. } => "timer-fired",
    }
}

/// Re-executes a run from its log without any effects.
pub fn replay(store: &dyn EventStore, ws: &str, run_id: &str, diagrams: &dyn DiagramSource) -> Result<Replay, EngineError> {
    let records = store.read(ws, run_id, 1)?;
    replay_records(run_id, &records, diagrams, Origin::Start)
}

pub fn replay_records(run_id: &str, records: &[EventRecord], diagrams: &dyn DiagramSource, from: Origin) -> Result<Replay, EngineError> {
    exec::drive(run_id, records, diagrams, None, from)
}

/// Snapshots σ at the latest top-level node boundary and logs it.
pub fn checkpoint(store: &mut dyn EventStore, ws: &str, run_id: &str, diagrams: &dyn DiagramSource, at: String) -> Result<(u64, State), EngineError> {
    let records = store.read(ws, run_id, 1)?;
    let snap = exec::boundary_snapshot(run_id, &records, diagrams)?;
    exec::append_checkpoint(store, ws, run_id, &snap, at)?;
    Ok((snap.at_seq, snap.sigma))
}

/// Operator-requested continuation of a boundary step whose last attempt
/// failed. The step keeps its idempotency key, so an outcome the external
/// system already committed is returned rather than repeated.
pub fn retry_boundary(
    store: &mut dyn EventStore,
    ws: &str,
    run_id: &str,
    node: &str,
    diagrams: &dyn DiagramSource,
    effects: &mut dyn Effects,
) -> Result<RunView, EngineError> {
    let records = store.read(ws, run_id, 1)?;
    let Some(last) = records.iter().rev().find(|r| r.kind != EventKind::CheckpointTaken) else {
        return Err(EngineError::NotRetryable(run_id.to_string()));
    };
    let failed = last.kind == EventKind::BoundaryOutcome
        && last.node_id.as_deref() == Some(node)
        && last.payload.get("ok") == Some(&serde_json::Value::Bool(false));
    if !failed {
        if last.kind == EventKind::RunErrored && last.payload.get("reason").and_then(|v| v.as_str()) == Some("boundary-failure") {
            return Err(EngineError::RetriesExhausted(node.to_string()));
        }
        return Err(EngineError::NotRetryable(alloc::format!("last event of {run_id} is not a failed boundary outcome at {node}")));
    }
    resume(store, ws, run_id, diagrams, effects)
}

/// Reads the lifecycle status from a log without re-executing it.
pub fn status_hint(records: &[EventRecord]) -> &'static str {
    let mut status = "running";
    for r in records {
        status = match r.kind {
            EventKind::RunCompleted => "completed",
            EventKind::RunErrored => "errored",
            EventKind::ListenerArmed if status != "completed" && status != "errored" => {
                if r.payload.pointer("/listener/type").and_then(|v| v.as_str()) == Some("guard") {
                    "paused"
                } else {
                    "waiting"
                }
            }
            EventKind::NodeEntered | EventKind::NodeCompleted
                if status != "completed" && status != "errored" =>
            {
                "running"
            }
            _ => status,
        };
    }
    status
}
