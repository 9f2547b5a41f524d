use std::collections::BTreeMap;
use std::sync::Arc;

use graphflow_core::diagram::{self, Diagram};
use graphflow_core::runtime::{
    self, Adapters, BasicEffects, EngineError, FailureReason, FaultSchedule, GuardConfig, ListenerKind, OnViolation, Origin,
    RunConfig, RunStatus, SimAdapter, Signal, StartRequest,
};
use graphflow_core::store::{EventKind, EventStore, MemoryStore};
use graphflow_core::Value;

const SUM: &str = include_str!("../../../corpus/sum_of_squares.gfl");
const SALES: &str = include_str!("../../../corpus/sales_report_submission.gfl");
const COGNITIVE: &str = include_str!("../../../corpus/cognitive_testing.gfl");

fn load(src: &str) -> (Arc<Diagram>, BTreeMap<String, Arc<Diagram>>) {
    let d = Arc::new(diagram::from_source(src, None).unwrap());
    let lib = BTreeMap::from([(d.slug.clone(), d.clone())]);
    (d, lib)
}

fn store() -> MemoryStore {
    let mut s = MemoryStore::new();
    s.create_workspace("w").unwrap();
    s
}

fn nums(a: Value, b: Value) -> StartRequest {
    StartRequest { inputs: BTreeMap::from([("a".into(), a), ("b".into(), b)]), ..Default::default() }
}

fn kinds(s: &MemoryStore, run: &str) -> Vec<EventKind> {
    s.read("w", run, 1).unwrap().into_iter().map(|r| r.kind).collect()
}

fn contact(id: &str, ext: &str, ty: &str) -> Value {
    Value::map([("id", Value::str(id)), ("ext-id", Value::str(ext)), ("ext-type", Value::str(ty))])
}

fn cognitive_request() -> StartRequest {
    StartRequest {
        bindings: BTreeMap::from([
            ("patient".into(), contact("p1", "ehr-p1", "Patient")),
            ("provider".into(), contact("dr1", "ehr-dr1", "Provider")),
        ]),
        ..Default::default()
    }
}

fn decide(node: &str, choice: &str) -> Signal {
    Signal::HumanDecision { node_id: node.into(), choice: choice.into(), actor: "ops".into() }
}

#[test]
fn sum_of_squares_returns_25() {
    let (d, lib) = load(SUM);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let v = runtime::start_run(&mut s, "w", "r1", &d, &lib, &nums(Value::Number(3.0), Value::Number(4.0)), &mut fx).unwrap();
    assert_eq!(v.status, RunStatus::Completed);
    assert_eq!(v.sigma.0.get("aSquared"), Some(&Value::Number(9.0)));
    assert_eq!(v.sigma.0.get("bSquared"), Some(&Value::Number(16.0)));
    assert_eq!(v.ret(), Some(&Value::map([("sum", Value::Number(25.0))])));
    let order: Vec<&str> = v.trace.iter().map(|t| t.node.as_str()).collect();
    assert_eq!(order, ["1", "2", "3", "4", "5a"]);
    assert_eq!(v.adapter_calls, 0);
    // core lanes never touch the boundary
    assert!(!kinds(&s, "r1").contains(&EventKind::BoundaryOutcome));

    let r = runtime::replay(&s, "w", "r1", &lib).unwrap();
    assert!(!r.incomplete);
    assert_eq!(r.view.trace, v.trace);
    assert_eq!(r.view.sigma, v.sigma);
}

#[test]
fn sum_over_bound_throws() {
    let (d, lib) = load(SUM);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let v = runtime::start_run(&mut s, "w", "r1", &d, &lib, &nums(Value::Number(30.0), Value::Number(20.0)), &mut fx).unwrap();
    let RunStatus::Errored(f) = &v.status else { panic!("{:?}", v.status) };
    assert_eq!(f.reason, FailureReason::Throw);
    assert_eq!(f.message, "Sum exceeds allowed bound");
    assert_eq!(f.node.as_deref(), Some("5b"));
    assert_eq!(v.sigma.0.get("sum"), Some(&Value::Number(1300.0)));
    assert_eq!(kinds(&s, "r1").last(), Some(&EventKind::RunErrored));
}

#[test]
fn null_input_is_a_precondition_violation() {
    let (d, lib) = load(SUM);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let e = runtime::start_run(&mut s, "w", "r1", &d, &lib, &nums(Value::Null, Value::Number(4.0)), &mut fx).unwrap_err();
    assert_eq!(e, EngineError::PreconditionViolation { run_id: "r1".into(), failed: vec!["(:ne $.a null)".into()] });
    assert_eq!(kinds(&s, "r1"), [EventKind::RunErrored]);
    let r = runtime::replay(&s, "w", "r1", &lib).unwrap();
    assert!(matches!(r.view.status, RunStatus::Errored(ref f) if f.reason == FailureReason::Precondition));
}

#[test]
fn input_validation() {
    let (d, lib) = load(SUM);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let bad = nums(Value::str("3"), Value::Number(4.0));
    assert!(matches!(runtime::start_run(&mut s, "w", "r1", &d, &lib, &bad, &mut fx), Err(EngineError::Validation(_))));
    let mut extra = nums(Value::Number(1.0), Value::Number(4.0));
    extra.inputs.insert("c".into(), Value::Number(1.0));
    assert!(matches!(runtime::start_run(&mut s, "w", "r1", &d, &lib, &extra, &mut fx), Err(EngineError::Validation(_))));
    assert!(s.read("w", "r1", 1).is_err(), "rejected requests log nothing");
}

#[test]
fn cognitive_run_waits_on_tag_and_resumes() {
    let (d, lib) = load(COGNITIVE);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let v = runtime::start_run(&mut s, "w", "r1", &d, &lib, &cognitive_request(), &mut fx).unwrap();
    let RunStatus::Waiting(l) = &v.status else { panic!("{:?}", v.status) };
    assert_eq!(l.node, "3");
    assert_eq!(l.kind, ListenerKind::Tag { resource: "p1".into(), with: vec!["cognitive-screening-completed".into()], without: vec![] });
    assert_eq!(v.adapter_calls, 2);
    // the lab order result lands in σ and the order id flows into the text
    assert!(v.sigma.0.get("order").and_then(|o| o.get("id")).is_some());

    // unrelated tag on the same patient: logged, still waiting
    fx.tag("p1", "over-60");
    let unrelated = Signal::TagAdded { resource: "p1".into(), tag: "over-60".into(), tags: fx.tags_of("p1") };
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &unrelated, &mut fx).unwrap();
    assert!(matches!(v.status, RunStatus::Waiting(_)));
    assert_eq!(kinds(&s, "r1").last(), Some(&EventKind::SignalReceived));

    // another patient's tag is not for this run
    let other = Signal::TagAdded { resource: "p2".into(), tag: "cognitive-screening-completed".into(), tags: vec!["cognitive-screening-completed".into()] };
    assert!(matches!(runtime::deliver(&mut s, "w", "r1", &lib, &other, &mut fx), Err(EngineError::SignalMismatch(_))));

    fx.tag("p1", "cognitive-screening-completed");
    let done = Signal::TagAdded { resource: "p1".into(), tag: "cognitive-screening-completed".into(), tags: fx.tags_of("p1") };
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &done, &mut fx).unwrap();
    // screening negative: decision 4 has no :no edge, so the pathway ends
    assert_eq!(v.status, RunStatus::Completed);
    let order: Vec<&str> = v.trace.iter().map(|t| t.node.as_str()).collect();
    assert_eq!(order, ["1", "2", "3", "4"]);
    assert!(v.trace[3].next.is_empty());
    assert!(matches!(runtime::deliver(&mut s, "w", "r1", &lib, &done, &mut fx), Err(EngineError::StaleSignal(_))));

    let r = runtime::replay(&s, "w", "r1", &lib).unwrap();
    assert_eq!(r.view.adapter_calls, 0);
    assert_eq!(r.view.trace, v.trace);
    assert_eq!(r.view.status, RunStatus::Completed);
}

#[test]
fn cognitive_positive_path_to_care_plan() {
    let (d, lib) = load(COGNITIVE);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    runtime::start_run(&mut s, "w", "r1", &d, &lib, &cognitive_request(), &mut fx).unwrap();
    for t in ["cognitive-screening-positive", "cognitive-screening-completed"] {
        fx.tag("p1", t);
    }
    let sig = Signal::TagAdded { resource: "p1".into(), tag: "cognitive-screening-completed".into(), tags: fx.tags_of("p1") };
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &sig, &mut fx).unwrap();
    let RunStatus::Waiting(l) = &v.status else { panic!() };
    assert_eq!((l.node.as_str(), &l.kind), ("6", &ListenerKind::Meeting));
    let e = runtime::deliver(&mut s, "w", "r1", &lib, &Signal::HumanDecision { node_id: "6".into(), choice: "proceed".into(), actor: " ".into() }, &mut fx);
    assert!(matches!(e, Err(EngineError::Validation(_))));
    assert!(matches!(runtime::deliver(&mut s, "w", "r1", &lib, &decide("6", "yes"), &mut fx), Err(EngineError::SignalMismatch(_))));
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &decide("6", "proceed"), &mut fx).unwrap();
    assert!(matches!(&v.status, RunStatus::Waiting(l) if l.node == "7"));
    for t in ["cognitive-assessment-completed", "cognitive-assessment-positive"] {
        fx.tag("p1", t);
    }
    let sig = Signal::TagAdded { resource: "p1".into(), tag: "cognitive-assessment-positive".into(), tags: fx.tags_of("p1") };
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &sig, &mut fx).unwrap();
    assert_eq!(v.status, RunStatus::Completed);
    let order: Vec<&str> = v.trace.iter().map(|t| t.node.as_str()).collect();
    assert_eq!(order, ["1", "2", "3", "4", "5", "6", "7", "8", "9"]);

    // every completed boundary-lane node has a boundary outcome or a signal
    let log = s.read("w", "r1", 1).unwrap();
    for t in &v.trace {
        let touched = log.iter().any(|r| {
            r.node_id.as_deref() == Some(&t.node) && matches!(r.kind, EventKind::BoundaryOutcome | EventKind::SignalReceived)
        });
        assert!(touched, "node {} left no boundary trace", t.node);
    }
    let r = runtime::replay(&s, "w", "r1", &lib).unwrap();
    assert_eq!((r.view.adapter_calls, r.view.trace.len()), (0, 9));
}

#[test]
fn sales_cycle_via_human_decisions() {
    let (d, lib) = load(SALES);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let v = runtime::start_run(&mut s, "w", "r1", &d, &lib, &StartRequest::default(), &mut fx).unwrap();
    assert!(matches!(&v.status, RunStatus::Waiting(l) if l.node == "3"));
    runtime::deliver(&mut s, "w", "r1", &lib, &decide("3", "proceed"), &mut fx).unwrap();
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &decide("4", "no"), &mut fx).unwrap();
    // back to 1, second visit
    assert!(matches!(&v.status, RunStatus::Waiting(l) if l.node == "3" && l.id == "3@2"));
    runtime::deliver(&mut s, "w", "r1", &lib, &decide("3", "proceed"), &mut fx).unwrap();
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &decide("4", "yes"), &mut fx).unwrap();
    assert_eq!(v.status, RunStatus::Completed);
    let order: Vec<String> = v.trace.iter().map(|t| format!("{}#{}", t.node, t.visit)).collect();
    assert_eq!(order, ["1#1", "2#1", "3#1", "4#1", "1#2", "2#2", "3#2", "4#2", "5#1"]);
    let keys: std::collections::BTreeSet<String> =
        s.read("w", "r1", 1).unwrap().into_iter().filter_map(|r| r.idempotency_key).collect();
    // submit-report twice (fresh visit, fresh key) and send-email once
    assert_eq!(keys.len(), 3);
    let log = s.read("w", "r1", 1).unwrap();
    let actor = log.iter().find(|r| r.kind == EventKind::SignalReceived).unwrap();
    assert_eq!(actor.payload["actor"], "ops");
}

fn sequence_effects(seq: Vec<bool>) -> BasicEffects {
    BasicEffects::new(Adapters::simulated(FaultSchedule::Sequence(seq)))
}

#[test]
fn retry_then_succeed() {
    let (d, lib) = load(SALES);
    let mut s = store();
    let mut fx = sequence_effects(vec![true, false]);
    let v = runtime::start_run(&mut s, "w", "r1", &d, &lib, &StartRequest::default(), &mut fx).unwrap();
    assert!(matches!(v.status, RunStatus::Waiting(_)));
    let outcomes: Vec<_> = s.read("w", "r1", 1).unwrap().into_iter().filter(|r| r.node_id.as_deref() == Some("1") && r.kind == EventKind::BoundaryOutcome).collect();
    assert_eq!(outcomes.len(), 2);
    assert_eq!(outcomes[0].payload["ok"], false);
    assert_eq!(outcomes[0].payload["retry_after_ms"], 100);
    assert_eq!(outcomes[1].payload["attempt"], 2);
    assert_eq!(outcomes[0].idempotency_key, outcomes[1].idempotency_key);
}

#[test]
fn retries_exhausted() {
    let (d, lib) = load(SALES);
    let mut s = store();
    let mut fx = sequence_effects(vec![true, true, true]);
    let v = runtime::start_run(&mut s, "w", "r1", &d, &lib, &StartRequest::default(), &mut fx).unwrap();
    let RunStatus::Errored(f) = &v.status else { panic!() };
    assert_eq!((f.reason, f.node.as_deref()), (FailureReason::BoundaryFailure, Some("1")));
    assert_eq!(fx.clock.rfc3339(), "2025-01-01T00:00:00.300Z", "backoff 100 then 200 ms");
    assert!(matches!(runtime::retry_boundary(&mut s, "w", "r1", "1", &lib, &mut fx), Err(EngineError::RetriesExhausted(_))));
}

/// A store that refuses appends after a budget, to stand in for a crash.
struct Crashy {
    inner: MemoryStore,
    budget: usize,
}

impl EventStore for Crashy {
    fn create_workspace(&mut self, ws: &str) -> Result<(), graphflow_core::store::StoreError> {
        self.inner.create_workspace(ws)
    }
    fn has_workspace(&self, ws: &str) -> bool {
        self.inner.has_workspace(ws)
    }
    fn append(&mut self, ws: &str, run: &str, ev: graphflow_core::store::NewEvent) -> Result<u64, graphflow_core::store::StoreError> {
        if self.budget == 0 {
            return Err(graphflow_core::store::StoreError::Io("crash".into()));
        }
        self.budget -= 1;
        self.inner.append(ws, run, ev)
    }
    fn read(&self, ws: &str, run: &str, from: u64) -> Result<Vec<graphflow_core::store::EventRecord>, graphflow_core::store::StoreError> {
        self.inner.read(ws, run, from)
    }
    fn run_ids(&self, ws: &str) -> Result<Vec<String>, graphflow_core::store::StoreError> {
        self.inner.run_ids(ws)
    }
}

#[test]
fn crash_after_failed_attempt_then_operator_retry() {
    let (d, lib) = load(SALES);
    let mut s = Crashy { inner: store(), budget: 3 };
    let mut fx = sequence_effects(vec![true, false]);
    // RunStarted, NodeEntered, failed BoundaryOutcome, then the store dies
    assert!(runtime::start_run(&mut s, "w", "r1", &d, &lib, &StartRequest::default(), &mut fx).is_err());
    assert_eq!(kinds(&s.inner, "r1").last(), Some(&EventKind::BoundaryOutcome));
    s.budget = usize::MAX;
    let v = runtime::retry_boundary(&mut s, "w", "r1", "1", &lib, &mut fx).unwrap();
    assert!(matches!(&v.status, RunStatus::Waiting(l) if l.node == "3"));
    assert!(matches!(runtime::retry_boundary(&mut s, "w", "r1", "1", &lib, &mut fx), Err(EngineError::NotRetryable(_))));
}

#[test]
fn duplicate_key_is_one_effect() {
    let mut a = SimAdapter::new(FaultSchedule::Never);
    let args = Value::Null;
    let call = runtime::BoundaryCall { run_id: "r", node: "1", action: "send-email", args: &args, key: "k", attempt: 1 };
    use graphflow_core::runtime::BoundaryAdapter;
    let first = a.invoke(&call).unwrap();
    let second = a.invoke(&runtime::BoundaryCall { attempt: 2, ..call }).unwrap();
    assert_eq!(first, second);
    assert_eq!(a.effects, 1);
}

#[test]
fn truncated_log_replays_incomplete() {
    let (d, lib) = load(SUM);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    runtime::start_run(&mut s, "w", "r1", &d, &lib, &nums(Value::Number(3.0), Value::Number(4.0)), &mut fx).unwrap();
    let mut log = s.read("w", "r1", 1).unwrap();
    log.pop();
    let r = runtime::replay_records("r1", &log, &lib, Origin::Start).unwrap();
    assert!(r.incomplete);
    assert_eq!(r.view.adapter_calls, 0);
}

#[test]
fn tampered_log_diverges() {
    let (d, lib) = load(SUM);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    runtime::start_run(&mut s, "w", "r1", &d, &lib, &nums(Value::Number(3.0), Value::Number(4.0)), &mut fx).unwrap();
    let mut log = s.read("w", "r1", 1).unwrap();
    let i = log.iter().position(|r| r.kind == EventKind::DecisionEvaluated).unwrap();
    log[i].payload["outcome"] = "no".into();
    assert!(matches!(runtime::replay_records("r1", &log, &lib, Origin::Start), Err(EngineError::ReplayDivergence { .. })));
}

#[test]
fn checkpoint_resume_matches_full_replay() {
    let (d, lib) = load(COGNITIVE);
    let mut s = store();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    runtime::start_run(&mut s, "w", "r1", &d, &lib, &cognitive_request(), &mut fx).unwrap();
    let (at, sigma) = runtime::checkpoint(&mut s, "w", "r1", &lib, fx.clock.rfc3339()).unwrap();
    // boundary after node 2, the last completed node before the wait
    let log = s.read("w", "r1", 1).unwrap();
    let n2 = log.iter().rev().find(|r| r.kind == EventKind::NodeCompleted).unwrap();
    assert_eq!((at, n2.node_id.as_deref()), (n2.seq, Some("2")));
    assert!(sigma.0.contains_key("order"));
    fx.tag("p1", "cognitive-screening-completed");
    let sig = Signal::TagAdded { resource: "p1".into(), tag: "cognitive-screening-completed".into(), tags: fx.tags_of("p1") };
    let v = runtime::deliver(&mut s, "w", "r1", &lib, &sig, &mut fx).unwrap();
    let log = s.read("w", "r1", 1).unwrap();
    let full = runtime::replay_records("r1", &log, &lib, Origin::Start).unwrap();
    let from_cp = runtime::replay_records("r1", &log, &lib, Origin::LatestCheckpoint).unwrap();
    assert_eq!(full.view.trace, from_cp.view.trace);
    assert_eq!(full.view.sigma, from_cp.view.sigma);
    assert_eq!(full.view.sigma, v.sigma);
    // checkpoints may follow terminal events
    runtime::checkpoint(&mut s, "w", "r1", &lib, fx.clock.rfc3339()).unwrap();
}

#[test]
fn first_checkpoint_is_sigma0() {
    let (d, lib) = load(SALES);
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let mut lone = Crashy { inner: store(), budget: 1 };
    let _ = runtime::start_run(&mut lone, "w", "r1", &d, &lib, &StartRequest::default(), &mut fx);
    let mut s = lone.inner;
    let (at, sigma) = runtime::checkpoint(&mut s, "w", "r1", &lib, fx.clock.rfc3339()).unwrap();
    let started = &s.read("w", "r1", 1).unwrap()[0];
    assert_eq!(at, 1);
    assert_eq!(sigma.to_value().to_json(), started.payload["sigma"]);
}

#[test]
fn guard_violation_errors_or_pauses() {
    let (d, lib) = load(COGNITIVE);
    struct NullOrder;
    impl runtime::BoundaryAdapter for NullOrder {
        fn invoke(&mut self, _: &runtime::BoundaryCall<'_>) -> Result<Value, String> {
            Ok(Value::Null)
        }
    }
    let effects = || {
        let mut a = Adapters::simulated(FaultSchedule::Never);
        a.register("create-lab-order", NullOrder);
        BasicEffects::new(a)
    };
    // audit only
    let mut s = store();
    let mut fx = effects();
    let v = runtime::start_run(&mut s, "w", "r1", &d, &lib, &cognitive_request(), &mut fx).unwrap();
    // unenforced: node 1 completes with the bad order, node 2 then trips on $.order.id
    let null_order_downstream = |s: &RunStatus| matches!(s, RunStatus::Errored(f) if f.reason == FailureReason::EvalError && f.node.as_deref() == Some("2"));
    assert!(null_order_downstream(&v.status), "{:?}", v.status);
    let log = s.read("w", "r1", 1).unwrap();
    let g = log.iter().find(|r| r.kind == EventKind::GuardChecked).unwrap();
    assert_eq!((g.payload["predicate"].as_str(), &g.payload["result"]), (Some("(:ne $.order null)"), &serde_json::json!(false)));

    let mut enforce = cognitive_request();
    enforce.config = RunConfig { guard: GuardConfig { enforce: true, on_violation: OnViolation::Error }, ..Default::default() };
    let v = runtime::start_run(&mut s, "w", "r2", &d, &lib, &enforce, &mut fx).unwrap();
    assert!(matches!(&v.status, RunStatus::Errored(f) if f.reason == FailureReason::GuardViolation));
    let k = kinds(&s, "r2");
    assert!(k.contains(&EventKind::GuardViolated) && !k.contains(&EventKind::NodeCompleted));

    enforce.config.guard.on_violation = OnViolation::Pause;
    let v = runtime::start_run(&mut s, "w", "r3", &d, &lib, &enforce, &mut fx).unwrap();
    let RunStatus::Paused(l) = &v.status else { panic!("{:?}", v.status) };
    assert_eq!(l.node, "1");
    // retry re-executes under a new key group
    let v = runtime::deliver(&mut s, "w", "r3", &lib, &decide("1", "retry"), &mut fx).unwrap();
    assert!(matches!(v.status, RunStatus::Paused(_)));
    let keys: std::collections::BTreeSet<String> = s.read("w", "r3", 1).unwrap().into_iter().filter_map(|r| r.idempotency_key).collect();
    assert_eq!(keys.len(), 2);
    let v = runtime::deliver(&mut s, "w", "r3", &lib, &decide("1", "resume"), &mut fx).unwrap();
    assert!(null_order_downstream(&v.status));

    let v = runtime::start_run(&mut s, "w", "r4", &d, &lib, &enforce, &mut fx).unwrap();
    assert!(matches!(v.status, RunStatus::Paused(_)));
    let v = runtime::deliver(&mut s, "w", "r4", &lib, &decide("1", "abort"), &mut fx).unwrap();
    assert!(matches!(&v.status, RunStatus::Errored(f) if f.reason == FailureReason::Aborted));
}
