//! The re-execution interpreter behind every runtime entry point.

// `Stop` is how a step ends, waits included, so it is big and on the hot path.
#![allow(clippy::result_large_err)]

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde_json::{json, Value as Json};

use super::builtins::{self, BuiltinOutcome};
use super::{
    idempotency_key, BoundaryCall, DiagramSource, Effects, EngineError, Failure, FailureReason, Listener, ListenerKind,
    Match, OnViolation, Origin, Replay, RunConfig, RunStatus, RunView, Signal, StartRequest, Transition,
};
use crate::diagram::{ActionBinding, Diagram, Node, Schedule};
use crate::gfl::{EdgeLabel, Expr, NodeType};
use crate::predicate::{eval, EvalError, NoResources, Predicate, ResourceContext};
use crate::store::{EventKind, EventRecord, EventStore, NewEvent};
use crate::value::{Path, State, Value};

pub(super) struct Live<'a> {
    pub store: &'a mut dyn EventStore,
    pub ws: &'a str,
    pub effects: &'a mut dyn Effects,
}

struct EffectsCtx<'e>(&'e dyn Effects);

impl ResourceContext for EffectsCtx<'_> {
    fn has_tag(&self, resource: &Value, tag: &str) -> Result<bool, EvalError> {
        self.0.has_tag(resource, tag)
    }
}

enum Stop {
    Waiting(Listener),
    Paused(Listener),
    Ended(RunStatus),
    /// Replay ran out of log where the run would have appended.
    Incomplete,
    Fail(EngineError),
}

impl From<EngineError> for Stop {
    fn from(e: EngineError) -> Self {
        Stop::Fail(e)
    }
}

struct Frame {
    d: Arc<Diagram>,
    sigma: State,
    sched: Schedule,
    prefix: String,
    top: bool,
}

/// σ and schedule at a top-level node boundary.
#[derive(Debug, Clone)]
pub(super) struct Snapshot {
    pub at_seq: u64,
    pub sigma: State,
    pub sched: Schedule,
}

#[derive(PartialEq)]
enum GuardStep {
    Continue,
    Retry,
}

struct Exec<'h, 'l, 'x> {
    run_id: &'h str,
    history: Vec<&'h EventRecord>,
    pos: usize,
    last_seq: u64,
    live: Option<&'l mut Live<'x>>,
    diagrams: &'h dyn DiagramSource,
    config: RunConfig,
    trace: Vec<Transition>,
    boundary: Option<Snapshot>,
    calls: u64,
}

fn divergence(seq: u64, detail: String) -> EngineError {
    EngineError::ReplayDivergence { seq, detail }
}

fn has_with_tag(p: &Predicate) -> bool {
    match p {
        Predicate::WithTag { .. } => true,
        Predicate::And(ps) | Predicate::Or(ps) => ps.iter().any(has_with_tag),
        Predicate::Not(q) => has_with_tag(q),
        Predicate::Compare { .. } => false,
    }
}

fn listener_id(path: &str, visit: u32) -> String {
    format!("{path}@{visit}")
}

/// Prefix for nodes of a child frame started by visit `visit` of `path`.
fn frame_prefix(path: &str, visit: u32) -> String {
    if visit == 1 {
        String::from(path)
    } else {
        format!("{path}~{visit}")
    }
}

fn to_targets(d: &Diagram, id: &str) -> Vec<String> {
    d.out_edges(id).filter(|e| e.label == EdgeLabel::To).map(|e| e.to.clone()).collect()
}

fn outcome_payload(action: Option<&str>, attempt: u32, r: &Result<Value, String>, in_process: bool, retry_after_ms: Option<u64>) -> Json {
    let (ok, value, reason) = match r {
        Ok(v) => (true, v.to_json(), Json::Null),
        Err(m) => (false, Json::Null, Json::String(m.clone())),
    };
    json!({
        "action": action,
        "attempt": attempt,
        "ok": ok,
        "value": value,
        "reason": reason,
        "in_process": in_process,
        "retry_after_ms": retry_after_ms,
    })
}

fn builtin_value(o: &BuiltinOutcome) -> Value {
    match o {
        BuiltinOutcome::Value(v) => v.clone(),
        BuiltinOutcome::Return(m) => Value::Map(m.clone()),
        BuiltinOutcome::Throw(msg) => Value::map([("throw", Value::str(msg.clone()))]),
        BuiltinOutcome::Nothing => Value::Null,
    }
}

fn guard_payload(phase: &str, text: &str, r: &Result<bool, EvalError>) -> Json {
    match r {
        Ok(b) => json!({"phase": phase, "predicate": text, "result": b, "error": null}),
        Err(e) => json!({"phase": phase, "predicate": text, "result": null, "error": e.to_string()}),
    }
}

fn decision_payload(pred: Option<&Predicate>, r: &Result<bool, EvalError>, external: bool) -> Json {
    let (outcome, error) = match r {
        Ok(true) => ("yes", Json::Null),
        Ok(false) => ("no", Json::Null),
        Err(e) => ("maybe", Json::String(e.to_string())),
    };
    json!({"predicate": pred.map(|p| p.to_string()), "outcome": outcome, "external": external, "error": error})
}

/// σ₀ for a frame: declared variables, then inputs, lane contacts, subject.
pub(super) fn initial_sigma(d: &Diagram, inputs: &BTreeMap<String, Value>, swimlanes: Option<Value>, subject: Option<&Value>) -> State {
    let mut s = State::new();
    for (p, v) in &d.variables {
        s.set(p, v.clone());
    }
    for (k, _) in &d.inputs {
        s.0.insert(k.clone(), inputs.get(k).cloned().unwrap_or(Value::Null));
    }
    if d.inputs.is_empty() {
        for (k, v) in inputs {
            s.0.insert(k.clone(), v.clone());
        }
    }
    if let Some(lanes) = swimlanes {
        s.0.insert("swimlanes".into(), lanes);
    }
    if let Some(v) = subject {
        s.0.insert("subject".into(), v.clone());
    }
    s
}

fn swimlanes_value(bindings: &BTreeMap<String, Value>) -> Option<Value> {
    if bindings.is_empty() {
        return None;
    }
    Some(Value::Map(bindings.iter().map(|(lane, c)| (lane.clone(), Value::map([("contact", c.clone())]))).collect()))
}

fn validate(d: &Diagram, req: &StartRequest) -> Result<(), EngineError> {
    if !d.inputs.is_empty() {
        for (k, v) in &req.inputs {
            let Some(ty) = d.input_type(k) else {
                return Err(EngineError::Validation(format!("unknown input {k}")));
            };
            if *ty == Value::keyword("number") && !v.is_null() && !matches!(v, Value::Number(_)) {
                return Err(EngineError::Validation(format!("input {k} must be a number, got {}", v.type_name())));
            }
        }
    }
    for lane in req.bindings.keys() {
        if d.lane(lane).is_none() {
            return Err(EngineError::Validation(format!("unknown lane {lane}")));
        }
    }
    Ok(())
}

pub(super) fn start(
    store: &mut dyn EventStore,
    ws: &str,
    run_id: &str,
    d: &Arc<Diagram>,
    diagrams: &dyn DiagramSource,
    req: &StartRequest,
    effects: &mut dyn Effects,
) -> Result<RunView, EngineError> {
    validate(d, req)?;
    if store.read(ws, run_id, 1).is_ok_and(|r| !r.is_empty()) {
        return Err(EngineError::Validation(format!("run {run_id} already exists")));
    }
    let sigma = initial_sigma(d, &req.inputs, swimlanes_value(&req.bindings), req.subject.as_ref());
    let failed: Vec<String> = {
        let ctx = EffectsCtx(&*effects);
        d.requires.iter().filter(|p| eval(p, &sigma, &ctx) != Ok(true)).map(|p| p.to_string()).collect()
    };
    let diagram = json!({"slug": d.slug, "content_hash": d.content_hash});
    if !failed.is_empty() {
        let payload = json!({
            "reason": "precondition",
            "message": format!("requires failed: {}", failed.join(", ")),
            "node": null,
            "failed": failed,
            "diagram": diagram,
        });
        store.append(ws, run_id, NewEvent { at: effects.now(), node_id: None, kind: EventKind::RunErrored, payload, idempotency_key: None })?;
        return Err(EngineError::PreconditionViolation { run_id: run_id.to_string(), failed });
    }
    let j = |m: &BTreeMap<String, Value>| Json::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect());
    let payload = json!({
        "diagram": diagram,
        "inputs": j(&req.inputs),
        "bindings": j(&req.bindings),
        "subject": req.subject.as_ref().map(Value::to_json),
        "sigma": sigma.to_value().to_json(),
        "config": serde_json::to_value(req.config).expect("config serializes"),
    });
    store.append(ws, run_id, NewEvent { at: effects.now(), node_id: None, kind: EventKind::RunStarted, payload, idempotency_key: None })?;
    super::resume(store, ws, run_id, diagrams, effects)
}

pub(super) fn append_signal(
    store: &mut dyn EventStore,
    ws: &str,
    run_id: &str,
    l: &Listener,
    s: &Signal,
    at: String,
    actor: Option<String>,
) -> Result<u64, EngineError> {
    let mut payload = serde_json::to_value(s).expect("signals serialize");
    payload["listener_id"] = Json::String(l.id.clone());
    if let (Some(a), None) = (actor, payload.get("actor")) {
        payload["actor"] = Json::String(a);
    }
    let kind = if matches!(s, Signal::TimerFired { .. }) { EventKind::TimerFired } else { EventKind::SignalReceived };
    Ok(store.append(ws, run_id, NewEvent { at, node_id: Some(l.node.clone()), kind, payload, idempotency_key: None })?)
}

pub(super) fn append_checkpoint(store: &mut dyn EventStore, ws: &str, run_id: &str, snap: &Snapshot, at: String) -> Result<u64, EngineError> {
    let payload = json!({
        "at_seq": snap.at_seq,
        "sigma": snap.sigma.to_value().to_json(),
        "schedule": serde_json::to_value(&snap.sched).expect("schedule serializes"),
    });
    Ok(store.append(ws, run_id, NewEvent { at, node_id: None, kind: EventKind::CheckpointTaken, payload, idempotency_key: None })?)
}

fn corrupt(m: impl Into<String>) -> EngineError {
    EngineError::LogCorruption(m.into())
}

fn state_of(j: &Json) -> Result<State, EngineError> {
    match Value::from_json(j) {
        Value::Map(m) => Ok(State(m)),
        _ => Err(corrupt("sigma is not a map")),
    }
}

pub(super) fn drive(
    run_id: &str,
    records: &[EventRecord],
    diagrams: &dyn DiagramSource,
    live: Option<&mut Live<'_>>,
    origin: Origin,
) -> Result<Replay, EngineError> {
    run(run_id, records, diagrams, live, origin).map(|(r, _)| r)
}

pub(super) fn boundary_snapshot(run_id: &str, records: &[EventRecord], diagrams: &dyn DiagramSource) -> Result<Snapshot, EngineError> {
    let (_, snap) = run(run_id, records, diagrams, None, Origin::Start)?;
    snap.ok_or_else(|| EngineError::Validation(format!("run {run_id} has no node boundary to checkpoint")))
}

fn run(
    run_id: &str,
    records: &[EventRecord],
    diagrams: &dyn DiagramSource,
    live: Option<&mut Live<'_>>,
    origin: Origin,
) -> Result<(Replay, Option<Snapshot>), EngineError> {
    let history: Vec<&EventRecord> = records.iter().filter(|r| r.kind != EventKind::CheckpointTaken).collect();
    let first = *history.first().ok_or_else(|| corrupt(format!("run {run_id} has no events")))?;
    let last_seq = records.last().map_or(0, |r| r.seq);
    let meta = |p: &Json| -> (String, String) {
        let s = |k: &str| p.pointer(k).and_then(Json::as_str).unwrap_or("").to_string();
        (s("/diagram/slug"), s("/diagram/content_hash"))
    };
    if first.kind == EventKind::RunErrored {
        // Rejected at start: the whole log is the precondition failure.
        let (slug, content_hash) = meta(&first.payload);
        let failure = failure_of(&first.payload)?;
        let view = RunView {
            run_id: run_id.to_string(),
            slug,
            content_hash,
            status: RunStatus::Errored(failure),
            sigma: State::new(),
            trace: Vec::new(),
            last_seq,
            adapter_calls: 0,
        };
        return Ok((Replay { view, incomplete: false }, None));
    }
    if first.kind != EventKind::RunStarted {
        return Err(corrupt(format!("run {run_id} does not begin with RunStarted")));
    }
    let (slug, content_hash) = meta(&first.payload);
    let d = diagrams.diagram(&slug, Some(&content_hash)).ok_or_else(|| EngineError::UnknownArtifact(format!("{slug}@{content_hash}")))?;
    let config: RunConfig = serde_json::from_value(first.payload.get("config").cloned().unwrap_or(Json::Null))
        .map_err(|e| corrupt(format!("RunStarted config: {e}")))?;
    let sigma0 = state_of(first.payload.get("sigma").ok_or_else(|| corrupt("RunStarted without sigma"))?)?;

    let mut frame = Frame { d: d.clone(), sigma: sigma0.clone(), sched: Schedule::start(&d), prefix: String::new(), top: true };
    let mut ex = Exec {
        run_id,
        history,
        pos: 1,
        last_seq: first.seq,
        live,
        diagrams,
        config,
        trace: Vec::new(),
        boundary: Some(Snapshot { at_seq: first.seq, sigma: sigma0, sched: frame.sched.clone() }),
        calls: 0,
    };
    if origin == Origin::LatestCheckpoint {
        if let Some(cp) = records.iter().rev().find(|r| r.kind == EventKind::CheckpointTaken) {
            let at_seq = cp.payload.get("at_seq").and_then(Json::as_u64).ok_or_else(|| corrupt("checkpoint without at_seq"))?;
            frame.sigma = state_of(cp.payload.get("sigma").ok_or_else(|| corrupt("checkpoint without sigma"))?)?;
            frame.sched = serde_json::from_value(cp.payload.get("schedule").cloned().unwrap_or(Json::Null))
                .map_err(|e| corrupt(format!("checkpoint schedule: {e}")))?;
            ex.pos = ex.history.iter().position(|r| r.seq > at_seq).unwrap_or(ex.history.len());
            ex.last_seq = at_seq;
            ex.trace = ex.history[..ex.pos]
                .iter()
                .filter(|r| r.kind == EventKind::NodeCompleted)
                .map(|r| transition_of(r))
                .collect::<Result<_, _>>()?;
            ex.boundary = Some(Snapshot { at_seq, sigma: frame.sigma.clone(), sched: frame.sched.clone() });
        }
    }

    let stop = ex.run_top(&mut frame);
    let (status, incomplete) = match stop {
        Stop::Ended(s) => (s, false),
        Stop::Waiting(l) => (RunStatus::Waiting(l), false),
        Stop::Paused(l) => (RunStatus::Paused(l), false),
        Stop::Incomplete => (RunStatus::Running, true),
        Stop::Fail(e) => return Err(e),
    };
    if ex.pos < ex.history.len() {
        let r = ex.history[ex.pos];
        return Err(divergence(r.seq, format!("run stopped as {} but the log continues with {}", status.name(), r.kind.name())));
    }
    let view = RunView {
        run_id: run_id.to_string(),
        slug: d.slug.clone(),
        content_hash: d.content_hash.clone(),
        status,
        sigma: frame.sigma,
        trace: ex.trace,
        last_seq: ex.last_seq.max(last_seq),
        adapter_calls: ex.calls,
    };
    Ok((Replay { view, incomplete }, ex.boundary))
}

fn failure_of(p: &Json) -> Result<Failure, EngineError> {
    let reason = serde_json::from_value(p.get("reason").cloned().unwrap_or(Json::Null)).map_err(|e| corrupt(format!("RunErrored reason: {e}")))?;
    Ok(Failure {
        reason,
        message: p.get("message").and_then(Json::as_str).unwrap_or("").to_string(),
        node: p.get("node").and_then(Json::as_str).map(String::from),
    })
}

fn transition_of(r: &EventRecord) -> Result<Transition, EngineError> {
    let node = r.node_id.clone().ok_or_else(|| corrupt("NodeCompleted without node"))?;
    let visit = r.payload.get("visit").and_then(Json::as_u64).ok_or_else(|| corrupt("NodeCompleted without visit"))? as u32;
    let next = serde_json::from_value(r.payload.get("next").cloned().unwrap_or(Json::Null)).map_err(|e| corrupt(format!("NodeCompleted next: {e}")))?;
    Ok(Transition { node, visit, next })
}

impl<'h> Exec<'h, '_, '_> {
    fn peek(&self) -> Option<&'h EventRecord> {
        self.history.get(self.pos).copied()
    }

    fn check(&self, rec: &EventRecord, kind: EventKind, node: Option<&str>, key: Option<&str>) -> Result<(), Stop> {
        if rec.kind != kind || rec.node_id.as_deref() != node || rec.idempotency_key.as_deref() != key {
            return Err(Stop::Fail(divergence(
                rec.seq,
                format!("expected {} at {}, log has {} at {}", kind.name(), node.unwrap_or("-"), rec.kind.name(), rec.node_id.as_deref().unwrap_or("-")),
            )));
        }
        Ok(())
    }

    /// Records a deterministic step, or checks it against the log.
    fn emit(&mut self, kind: EventKind, node: Option<&str>, payload: Json, key: Option<&str>) -> Result<u64, Stop> {
        if let Some(rec) = self.peek() {
            self.check(rec, kind, node, key)?;
            if rec.payload != payload {
                return Err(Stop::Fail(divergence(rec.seq, format!("{} payload differs: computed {payload}, logged {}", kind.name(), rec.payload))));
            }
            self.pos += 1;
            self.last_seq = rec.seq;
            return Ok(rec.seq);
        }
        self.append(kind, node, payload, key)
    }

    /// A nondeterministic observation: the logged payload when there is
    /// one, `None` when the caller must compute it live.
    fn take(&mut self, kind: EventKind, node: Option<&str>, key: Option<&str>) -> Result<Option<Json>, Stop> {
        match self.peek() {
            Some(rec) => {
                self.check(rec, kind, node, key)?;
                self.pos += 1;
                self.last_seq = rec.seq;
                Ok(Some(rec.payload.clone()))
            }
            None if self.live.is_some() => Ok(None),
            None => Err(Stop::Incomplete),
        }
    }

    fn append(&mut self, kind: EventKind, node: Option<&str>, payload: Json, key: Option<&str>) -> Result<u64, Stop> {
        let Some(live) = self.live.as_mut() else { return Err(Stop::Incomplete) };
        let ev = NewEvent { at: live.effects.now(), node_id: node.map(String::from), kind, payload, idempotency_key: key.map(String::from) };
        let seq = live.store.append(live.ws, self.run_id, ev).map_err(EngineError::from)?;
        self.last_seq = seq;
        Ok(seq)
    }

    fn effects(&mut self) -> &mut dyn Effects {
        &mut *self.live.as_mut().expect("only called after take() returned None").effects
    }

    fn fail(&mut self, reason: FailureReason, message: String, node: Option<&str>) -> Stop {
        let payload = json!({
            "reason": serde_json::to_value(reason).expect("reason serializes"),
            "message": message,
            "node": node,
        });
        match self.emit(EventKind::RunErrored, node, payload, None) {
            Ok(_) => Stop::Ended(RunStatus::Errored(Failure { reason, message, node: node.map(String::from) })),
            Err(s) => s,
        }
    }

    fn run_top(&mut self, f: &mut Frame) -> Stop {
        if let Err(s) = self.run_nodes(f) {
            return s;
        }
        let ret = f.sigma.0.get("return").map_or(Json::Null, Value::to_json);
        match self.emit(EventKind::RunCompleted, None, json!({"return": ret}), None) {
            Ok(_) => Stop::Ended(RunStatus::Completed),
            Err(s) => s,
        }
    }

    fn run_nodes(&mut self, f: &mut Frame) -> Result<(), Stop> {
        while let Some(id) = f.sched.pick(&f.d) {
            let next = self.step(f, &id)?;
            f.sched.complete(&id, &next);
            if f.top {
                self.boundary = Some(Snapshot { at_seq: self.last_seq, sigma: f.sigma.clone(), sched: f.sched.clone() });
            }
        }
        Ok(())
    }

    fn step(&mut self, f: &mut Frame, id: &str) -> Result<Vec<String>, Stop> {
        let d = f.d.clone();
        let node = d.node(id).expect("scheduled nodes exist");
        let visit = f.sched.enter(id);
        let path = format!("{}{}", f.prefix, id);
        self.emit(EventKind::NodeEntered, Some(&path), json!({"visit": visit, "type": node.node_type.name()}), None)?;
        let mut group = 0u32;
        let mut pauses = 0u32;
        'node: loop {
            for p in node.all_requires() {
                if self.guard("requires", p, &f.sigma, &path, visit, &mut pauses)? == GuardStep::Retry {
                    group += 1;
                    continue 'node;
                }
            }
            let next = self.act(&d, node, &mut f.sigma, &path, visit, group)?;
            for p in node.all_ensures() {
                if self.guard("ensures", p, &f.sigma, &path, visit, &mut pauses)? == GuardStep::Retry {
                    group += 1;
                    continue 'node;
                }
            }
            self.emit(EventKind::NodeCompleted, Some(&path), json!({"visit": visit, "next": next}), None)?;
            self.trace.push(Transition { node: path, visit, next: next.clone() });
            return Ok(next);
        }
    }

    fn guard(&mut self, phase: &str, p: &Predicate, sigma: &State, path: &str, visit: u32, pauses: &mut u32) -> Result<GuardStep, Stop> {
        let text = p.to_string();
        let payload = if has_with_tag(p) {
            match self.take(EventKind::GuardChecked, Some(path), None)? {
                Some(j) => j,
                None => {
                    let r = eval(p, sigma, &EffectsCtx(self.effects()));
                    let j = guard_payload(phase, &text, &r);
                    self.append(EventKind::GuardChecked, Some(path), j.clone(), None)?;
                    j
                }
            }
        } else {
            let j = guard_payload(phase, &text, &eval(p, sigma, &NoResources));
            self.emit(EventKind::GuardChecked, Some(path), j.clone(), None)?;
            j
        };
        if payload.get("result") == Some(&Json::Bool(true)) || !self.config.guard.enforce {
            return Ok(GuardStep::Continue);
        }
        let on = self.config.guard.on_violation;
        let action = if on == OnViolation::Pause { "pause" } else { "error" };
        self.emit(EventKind::GuardViolated, Some(path), json!({"phase": phase, "predicate": text, "action": action}), None)?;
        if on == OnViolation::Error {
            return Err(self.fail(FailureReason::GuardViolation, format!("{phase} {text} violated"), Some(path)));
        }
        *pauses += 1;
        let l = Listener {
            id: format!("{}!{}", listener_id(path, visit), pauses),
            node: path.to_string(),
            kind: ListenerKind::Guard { phase: phase.to_string(), predicate: text.clone() },
        };
        match self.await_signal(l)? {
            Signal::HumanDecision { choice, actor, .. } => match choice.as_str() {
                "resume" => Ok(GuardStep::Continue),
                "retry" => Ok(GuardStep::Retry),
                _ => Err(self.fail(FailureReason::Aborted, format!("aborted by {actor} after {phase} {text} violated"), Some(path))),
            },
            _ => unreachable!("guard listeners accept human decisions only"),
        }
    }

    fn await_signal(&mut self, l: Listener) -> Result<Signal, Stop> {
        let kind = serde_json::to_value(&l.kind).expect("listeners serialize");
        self.emit(EventKind::ListenerArmed, Some(&l.node), json!({"listener_id": l.id, "listener": kind}), None)?;
        loop {
            let Some(rec) = self.peek() else {
                return Err(if matches!(l.kind, ListenerKind::Guard { .. }) { Stop::Paused(l) } else { Stop::Waiting(l) });
            };
            if !matches!(rec.kind, EventKind::SignalReceived | EventKind::TimerFired) || rec.node_id.as_deref() != Some(&l.node) {
                return Err(Stop::Fail(divergence(rec.seq, format!("expected a signal for {}, log has {}", l.id, rec.kind.name()))));
            }
            let sig: Signal = serde_json::from_value(rec.payload.clone()).map_err(|e| corrupt(format!("signal at seq {}: {e}", rec.seq)))?;
            self.pos += 1;
            self.last_seq = rec.seq;
            if l.matches(&sig) == Match::Resumes {
                return Ok(sig);
            }
        }
    }

    fn act(&mut self, d: &Diagram, node: &Node, sigma: &mut State, path: &str, visit: u32, group: u32) -> Result<Vec<String>, Stop> {
        let boundary = !d.is_core(node);
        match node.node_type {
            NodeType::Decision => return self.decide(d, node, sigma, path, visit, boundary),
            NodeType::Wait => self.wait(node, sigma, path, visit)?,
            NodeType::Meeting => {
                self.await_signal(Listener { id: listener_id(path, visit), node: path.to_string(), kind: ListenerKind::Meeting })?;
            }
            NodeType::Queue => self.queue(node, sigma, path, visit)?,
            NodeType::Diagram => self.subdiagram(node, sigma, path, visit)?,
            NodeType::Object => self.object(node, sigma, path, visit, group)?,
            NodeType::Task | NodeType::Milestone | NodeType::Report => self.perform(node, sigma, path, visit, group, boundary)?,
        }
        Ok(to_targets(d, &node.id))
    }

    fn eval_args(&mut self, a: &ActionBinding, sigma: &State, path: &str) -> Result<Value, Stop> {
        builtins::eval_args(a, sigma).map_err(|e| self.fail(FailureReason::EvalError, e.to_string(), Some(path)))
    }

    fn perform(&mut self, node: &Node, sigma: &mut State, path: &str, visit: u32, group: u32, boundary: bool) -> Result<(), Stop> {
        let Some(a) = &node.action else {
            if boundary {
                self.emit(EventKind::BoundaryOutcome, Some(path), outcome_payload(None, 1, &Ok(Value::Null), true, None), None)?;
            }
            return Ok(());
        };
        if builtins::is_builtin(&a.callee) {
            let out = builtins::apply(a, sigma).map_err(|e| self.fail(FailureReason::EvalError, e.to_string(), Some(path)))?;
            if boundary {
                let p = outcome_payload(Some(&a.callee), 1, &Ok(builtin_value(&out)), true, None);
                self.emit(EventKind::BoundaryOutcome, Some(path), p, None)?;
            }
            return match out {
                BuiltinOutcome::Value(v) => {
                    if let Some(p) = &a.assigns {
                        sigma.set(p, v);
                    }
                    Ok(())
                }
                BuiltinOutcome::Return(m) => {
                    for (k, v) in m {
                        sigma.set(&Path::new(vec!["return".into(), k]).expect("nonempty"), v);
                    }
                    Ok(())
                }
                BuiltinOutcome::Throw(msg) => Err(self.fail(FailureReason::Throw, msg, Some(path))),
                BuiltinOutcome::Nothing => Ok(()),
            };
        }
        let args = self.eval_args(a, sigma, path)?;
        let v = self.call_boundary(path, visit, group, &a.callee, &args, false)?;
        if let Some(p) = &a.assigns {
            sigma.set(p, v);
        }
        Ok(())
    }

    fn object(&mut self, node: &Node, sigma: &mut State, path: &str, visit: u32, group: u32) -> Result<(), Stop> {
        let record = match &node.action {
            Some(a) => self.eval_args(a, sigma, path)?,
            None => Value::map([
                ("label", Value::str(node.label.clone())),
                ("ext-type", node.ext_type.clone().map_or(Value::Null, Value::Str)),
            ]),
        };
        let id = self.call_boundary(path, visit, group, "persist", &record, true)?;
        if let Some(p) = node.action.as_ref().and_then(|a| a.assigns.as_ref()) {
            sigma.set(p, id);
        }
        Ok(())
    }

    /// One boundary step with automatic retries under a shared key.
    fn call_boundary(&mut self, path: &str, visit: u32, group: u32, action: &str, args: &Value, persist: bool) -> Result<Value, Stop> {
        let key = idempotency_key(self.run_id, path, visit, group);
        let policy = self.config.retry;
        let max = policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let payload = match self.take(EventKind::BoundaryOutcome, Some(path), Some(&key))? {
                Some(p) => {
                    let logged = (p.get("action").and_then(Json::as_str), p.get("attempt").and_then(Json::as_u64));
                    if logged != (Some(action), Some(attempt as u64)) {
                        return Err(Stop::Fail(divergence(self.last_seq, format!("boundary outcome for :{action} attempt {attempt} logged as {p}"))));
                    }
                    p
                }
                None => {
                    let call = BoundaryCall { run_id: self.run_id, node: path, action, args, key: &key, attempt };
                    let fx = self.effects();
                    let r = if persist { fx.persist(args, &key).map(Value::Str) } else { fx.invoke(&call) };
                    self.calls += 1;
                    let delay = (r.is_err() && attempt < max).then(|| policy.delay_ms(attempt));
                    let p = outcome_payload(Some(action), attempt, &r, false, delay);
                    self.append(EventKind::BoundaryOutcome, Some(path), p.clone(), Some(&key))?;
                    if let Some(ms) = delay {
                        self.effects().backoff(ms);
                    }
                    p
                }
            };
            if payload.get("ok") == Some(&Json::Bool(true)) {
                let v = payload.get("value").ok_or_else(|| corrupt(format!("boundary outcome at {path} has no value")))?;
                return Ok(Value::from_json(v));
            }
            if attempt >= max {
                let reason = payload.get("reason").and_then(Json::as_str).unwrap_or("failed").to_string();
                return Err(self.fail(FailureReason::BoundaryFailure, format!(":{action} failed after {attempt} attempts: {reason}"), Some(path)));
            }
        }
    }

    fn decide(&mut self, d: &Diagram, node: &Node, sigma: &State, path: &str, visit: u32, boundary: bool) -> Result<Vec<String>, Stop> {
        let branch = |label: EdgeLabel| d.successor(&node.id, label).map(|t| vec![t.to_string()]).unwrap_or_default();
        let condition = node.action.as_ref().filter(|a| a.callee == "condition").and_then(|a| a.condition.as_ref());
        let Some(pred) = condition else {
            let mut choices: Vec<String> = Vec::new();
            for e in d.out_edges(&node.id).filter(|e| e.label.is_control()) {
                if !choices.iter().any(|c| c == e.label.name()) {
                    choices.push(e.label.name().to_string());
                }
            }
            let l = Listener { id: listener_id(path, visit), node: path.to_string(), kind: ListenerKind::Decision { choices } };
            let Signal::HumanDecision { choice, actor, .. } = self.await_signal(l)? else {
                unreachable!("decision listeners accept human decisions only")
            };
            let p = json!({"predicate": null, "outcome": choice, "external": true, "error": null, "actor": actor});
            self.emit(EventKind::DecisionEvaluated, Some(path), p, None)?;
            return Ok(branch(EdgeLabel::from_name(&choice).expect("choices come from edge labels")));
        };
        let payload = if boundary {
            let bo = match self.take(EventKind::BoundaryOutcome, Some(path), None)? {
                Some(j) => j,
                None => {
                    let r = eval(pred, sigma, &EffectsCtx(self.effects()));
                    let mut j = outcome_payload(Some("condition"), 1, &Ok(r.as_ref().map_or(Value::Null, |b| Value::Bool(*b))), true, None);
                    j["error"] = r.as_ref().err().map_or(Json::Null, |e| Json::String(e.to_string()));
                    self.append(EventKind::BoundaryOutcome, Some(path), j.clone(), None)?;
                    j
                }
            };
            let r = match (bo.get("value"), bo.get("error").and_then(Json::as_str)) {
                (Some(Json::Bool(b)), _) => Ok(*b),
                (_, Some(e)) => Err(EvalError::TypeMismatch(e.to_string())),
                _ => return Err(Stop::Fail(corrupt(format!("condition outcome at {path} has no value")))),
            };
            // keep the original message rather than the re-wrapped one
            let mut p = decision_payload(Some(pred), &r, true);
            if let Some(e) = bo.get("error").filter(|e| !e.is_null()) {
                p["error"] = e.clone();
            }
            self.emit(EventKind::DecisionEvaluated, Some(path), p.clone(), None)?;
            p
        } else if has_with_tag(pred) {
            match self.take(EventKind::DecisionEvaluated, Some(path), None)? {
                Some(j) => j,
                None => {
                    let j = decision_payload(Some(pred), &eval(pred, sigma, &EffectsCtx(self.effects())), true);
                    self.append(EventKind::DecisionEvaluated, Some(path), j.clone(), None)?;
                    j
                }
            }
        } else {
            let j = decision_payload(Some(pred), &eval(pred, sigma, &NoResources), false);
            self.emit(EventKind::DecisionEvaluated, Some(path), j.clone(), None)?;
            j
        };
        match payload.get("outcome").and_then(Json::as_str) {
            Some("yes") => Ok(branch(EdgeLabel::Yes)),
            Some("no") => Ok(branch(EdgeLabel::No)),
            Some("maybe") => match d.successor(&node.id, EdgeLabel::Maybe) {
                Some(t) => Ok(vec![t.to_string()]),
                None => {
                    let msg = payload.get("error").and_then(Json::as_str).unwrap_or("undecidable condition").to_string();
                    Err(self.fail(FailureReason::EvalError, msg, Some(path)))
                }
            },
            _ => Err(Stop::Fail(corrupt(format!("decision at {path} has no outcome")))),
        }
    }

    fn wait(&mut self, node: &Node, sigma: &State, path: &str, visit: u32) -> Result<(), Stop> {
        let kind = match node.action.as_ref() {
            Some(a) if a.callee == "await-with-tag" => {
                let r = a.arg("resource").ok_or_else(|| EvalError::TypeMismatch(":await-with-tag needs .resource".into()));
                let r = r.and_then(|e| builtins::eval_expr(e, sigma));
                let resource = match r {
                    Ok(v) => match crate::predicate::eval::resource_id(&v) {
                        Some(id) => id.to_string(),
                        None => return Err(self.fail(FailureReason::EvalError, format!("{v} is not a resource"), Some(path))),
                    },
                    Err(e) => return Err(self.fail(FailureReason::EvalError, e.to_string(), Some(path))),
                };
                let (with, without) = tag_filters(a.arg("filters"));
                ListenerKind::Tag { resource, with, without }
            }
            Some(a) if a.callee == "await-timer" => {
                let secs = a.arg("seconds").or_else(|| a.positional.first()).map(|e| builtins::eval_expr(e, sigma));
                match secs {
                    Some(Ok(Value::Number(s))) => ListenerKind::Timer { seconds: s },
                    _ => return Err(self.fail(FailureReason::EvalError, ":await-timer needs numeric .seconds".into(), Some(path))),
                }
            }
            _ => ListenerKind::Manual,
        };
        self.await_signal(Listener { id: listener_id(path, visit), node: path.to_string(), kind })?;
        Ok(())
    }

    fn child(&mut self, node: &Node) -> Result<Arc<Diagram>, Stop> {
        let slug = node.subdiagram.as_deref().or(node.callee()).unwrap_or("");
        self.diagrams.diagram(slug, None).ok_or_else(|| Stop::Fail(EngineError::UnknownArtifact(slug.to_string())))
    }

    /// Runs `child` in an isolated frame; returns its `$.return`.
    fn run_child(&mut self, child: Arc<Diagram>, inputs: BTreeMap<String, Value>, parent: &State, prefix: String, path: &str) -> Result<Value, Stop> {
        let sigma = initial_sigma(&child, &inputs, parent.0.get("swimlanes").cloned(), parent.0.get("subject"));
        let failed: Vec<String> = child.requires.iter().filter(|p| eval(p, &sigma, &NoResources) != Ok(true)).map(|p| p.to_string()).collect();
        if !failed.is_empty() {
            return Err(self.fail(FailureReason::Precondition, format!("{} requires failed: {}", child.slug, failed.join(", ")), Some(path)));
        }
        let mut f = Frame { sched: Schedule::start(&child), d: child, sigma, prefix, top: false };
        self.run_nodes(&mut f)?;
        Ok(f.sigma.0.get("return").cloned().unwrap_or(Value::Null))
    }

    fn subdiagram(&mut self, node: &Node, sigma: &mut State, path: &str, visit: u32) -> Result<(), Stop> {
        let child = self.child(node)?;
        let inputs = match &node.action {
            Some(a) => match self.eval_args(a, sigma, path)? {
                Value::Map(m) => m.into_iter().filter(|(k, _)| k != "_").collect(),
                _ => BTreeMap::new(),
            },
            None => BTreeMap::new(),
        };
        let ret = self.run_child(child, inputs, sigma, format!("{}/", frame_prefix(path, visit)), path)?;
        if let Some(p) = node.action.as_ref().and_then(|a| a.assigns.as_ref()) {
            sigma.set(p, ret);
        }
        Ok(())
    }

    fn queue(&mut self, node: &Node, sigma: &mut State, path: &str, visit: u32) -> Result<(), Stop> {
        let child = self.child(node)?;
        let items = match node.iterate.as_ref().map(|p| (p, sigma.get(p))) {
            Some((_, Some(Value::List(items)))) => items.clone(),
            Some((p, other)) => {
                let what = other.map_or("nothing", Value::type_name);
                return Err(self.fail(FailureReason::EvalError, format!("queue over {p} found {what}, not a list"), Some(path)));
            }
            None => return Err(self.fail(FailureReason::EvalError, "queue without an iterate variable".into(), Some(path))),
        };
        let mut rets = Vec::with_capacity(items.len());
        for (i, item) in items.into_iter().enumerate() {
            let inputs = BTreeMap::from([("item".to_string(), item), ("index".to_string(), Value::Number(i as f64))]);
            let prefix = format!("{}#{}/", frame_prefix(path, visit), i + 1);
            rets.push(self.run_child(child.clone(), inputs, sigma, prefix, path)?);
        }
        if let Some(p) = node.action.as_ref().and_then(|a| a.assigns.as_ref()) {
            sigma.set(p, Value::List(rets));
        }
        Ok(())
    }
}

/// `.filters` of an await: a dash list of `with:` / `without:` tags.
fn tag_filters(e: Option<&Expr>) -> (Vec<String>, Vec<String>) {
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut entry = |k: &str, v: &Expr| {
        let tag = match v {
            Expr::Keyword(t) | Expr::Str(t) => t.clone(),
            _ => return,
        };
        match k {
            "with" => with.push(tag),
            "without" => without.push(tag),
            _ => {}
        }
    };
    match e {
        Some(Expr::Items(items)) => items.iter().flatten().for_each(|(k, v)| entry(k, v)),
        Some(Expr::List(items)) => items.iter().filter_map(Expr::as_map).flatten().for_each(|(k, v)| entry(k, v)),
        Some(Expr::Map(m)) => m.iter().for_each(|(k, v)| entry(k, v)),
        _ => {}
    }
    (with, without)
}
