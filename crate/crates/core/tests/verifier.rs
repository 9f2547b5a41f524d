use std::collections::BTreeMap;
use std::sync::Arc;

use graphflow_core::diagram::{self, Diagram};
use graphflow_core::predicate::implies::valid_witness;
use graphflow_core::predicate::{parse_predicate, Implication};
use graphflow_core::runtime::{self, BasicEffects, EngineError, FailureReason, FaultSchedule, RunStatus, StartRequest};
use graphflow_core::store::{EventStore, MemoryStore};
use graphflow_core::verifier::discharge::valid_samples;
use graphflow_core::verifier::eval::{evaluate, Outcome};
use graphflow_core::verifier::{
    self, check_admissibility, check_composition, discharge, generate_obligations, AutomationLibrary, BindingError, Goal,
    Obligation, ObligationKind, Reason, Source, Status,
};
use graphflow_core::{Path, Value};

const SUM: &str = include_str!("../../../corpus/sum_of_squares.gfl");
const SALES: &str = include_str!("../../../corpus/sales_report_submission.gfl");

fn parse(src: &str) -> Diagram {
    diagram::from_source(src, None).unwrap()
}

fn mutate(from: &str, to: &str) -> Diagram {
    assert!(SUM.contains(from), "mutation anchor {from:?} missing");
    parse(&SUM.replacen(from, to, 1))
}

fn p(t: &str) -> graphflow_core::predicate::Predicate {
    parse_predicate(t).unwrap()
}

fn find<'a>(obs: &'a [Obligation], id: &str) -> &'a Obligation {
    obs.iter().find(|o| o.id == id).unwrap_or_else(|| panic!("no obligation {id}"))
}

const FIVE_A: &str = "    5a. [milestone] \"Return Result\" @system:\n";

#[test]
fn appendix_a_is_admissible() {
    assert_eq!(check_admissibility(&parse(SUM)), Ok(()));
}

#[test]
fn appendix_a_obligations() {
    let d = parse(SUM);
    let obs = generate_obligations(&d);
    for id in ["edge:1->3", "edge:2->3"] {
        let o = find(&obs, id);
        assert_eq!(o.kind, ObligationKind::Edge);
        assert_eq!(o.goal, Goal::Predicate(p("(:and (:ne $.aSquared null) (:ne $.bSquared null))")));
        assert!(o.antecedent.contains(&p("(:gte $.aSquared 0)")));
        assert!(o.antecedent.contains(&p("(:gte $.bSquared 0)")));
        assert!(o.contextual);
    }
    let exit = find(&obs, "exit:5a");
    assert_eq!(exit.kind, ObligationKind::Exit);
    assert!(exit.antecedent.contains(&p("(:lte $.sum 1000)")));
    assert_eq!(exit.goal, Goal::Predicate(p("(:gte $.return.sum 0)")));
    // the throwing branch never reaches an exit
    assert!(obs.iter().all(|o| o.id != "exit:5b"));
    let claims = obs.iter().filter(|o| o.kind == ObligationKind::Property).count();
    assert_eq!(claims, 3);
    assert!(obs.iter().all(|o| o.status == Status::Pending));
}

#[test]
fn appendix_a_discharges_at_budget_1000() {
    let d = parse(SUM);
    let done = discharge(&d, &generate_obligations(&d), 1000);
    for o in &done {
        if o.is_empirical() {
            assert_eq!(o.status, Status::EmpiricallyPassed { samples: 1000 }, "{o}");
        } else {
            assert_eq!(o.status, Status::Proven, "{o}");
        }
    }
    assert_eq!(done.iter().filter(|o| o.is_empirical()).count(), 3);
}

#[test]
fn symmetry_against_an_independent_oracle() {
    // f(a, b) = a² + b² computed here, compared with the evaluator.
    let d = parse(SUM);
    let samples = valid_samples(&d, 1000);
    assert_eq!(samples.len(), 1000);
    for s in &samples {
        let (a, b) = (s["a"].as_f64().unwrap(), s["b"].as_f64().unwrap());
        assert!((-1e6..=1e6).contains(&a) && (-1e6..=1e6).contains(&b));
        let f = a * a + b * b;
        assert_eq!(f, b * b + a * a);
        let e = evaluate(&d, s);
        if f <= 1000.0 {
            assert_eq!(e.outcome, Outcome::Returned);
            assert_eq!(e.ret(), Some(&Value::map([("sum", Value::Number(f))])));
        } else {
            assert!(matches!(e.outcome, Outcome::Threw { ref node, guarded: true, .. } if node == "5b"));
        }
    }
    // boundary values come first
    assert_eq!(samples[0], BTreeMap::from([("a".into(), Value::Number(0.0)), ("b".into(), Value::Number(0.0))]));
}

#[test]
fn strengthened_requires_is_refuted_at_zero() {
    let d = mutate(FIVE_A, &format!("{FIVE_A}      requires: (:gte $.sum 1)\n"));
    let done = discharge(&d, &generate_obligations(&d), 1000);
    let o = find(&done, "edge:4-yes->5a");
    let Status::Refuted { witness, inputs } = &o.status else { panic!("{o}") };
    let sum = Path::parse("$.sum").unwrap();
    assert_eq!(witness.get(&sum), Some(&Value::Number(0.0)));
    let Goal::Predicate(goal) = &o.goal else { panic!() };
    assert!(valid_witness(&o.antecedent, goal, witness));
    let inputs = inputs.as_ref().expect("a concrete run reaches the violation");
    assert_eq!(inputs.0, BTreeMap::from([("a".into(), Value::Number(0.0)), ("b".into(), Value::Number(0.0))]));
    // and the concrete run really violates the requires at 5a
    let e = evaluate(&d, &inputs.0);
    assert!(e.violations.iter().any(|v| v.node == "5a" && v.phase == "requires"));
    let r = verifier::verify(&d, 1000);
    assert!(!r.admitted);
    assert_eq!(r.failures().count(), 1);
}

#[test]
fn with_tag_antecedent_is_unknown() {
    let o = Obligation {
        id: "edge:x".into(),
        kind: ObligationKind::Edge,
        source: Source::Diagram,
        antecedent: vec![p("(:with-tag $.r :vip)"), p("(:gte $.x 0)")],
        goal: Goal::Predicate(p("(:gte $.x 1)")),
        contextual: true,
        status: Status::Pending,
    };
    let d = parse(SUM);
    assert_eq!(discharge(&d, &[o], 10)[0].status, Status::Unknown);

    let src = SUM.replacen("    - (:ne $.b null)\n", "    - (:ne $.b null)\n    - (:with-tag $.a :vip)\n", 1);
    let src = src.replacen(FIVE_A, &format!("{FIVE_A}      requires: (:gte $.sum 1)\n"), 1);
    let r = verifier::verify(&parse(&src), 100);
    assert_eq!(find(&r.obligations, "edge:4-yes->5a").status, Status::Unknown);
    assert!(!r.admitted);
}

#[test]
fn no_contracts_no_obligations() {
    let src = "diagram \"Plain\":\n  swimlanes:\n    - \"System\"\n  model:\n    1. [task] \"A\" @system --> 2:\n    2. [milestone] \"B\" @system:\n";
    let d = parse(src);
    assert_eq!(check_admissibility(&d), Ok(()));
    assert!(generate_obligations(&d).is_empty());
    assert!(verifier::verify(&d, 10).admitted);
}

#[test]
fn sales_is_rejected_with_reasons() {
    let d = parse(SALES);
    let reasons = check_admissibility(&d).unwrap_err();
    assert!(reasons.len() >= 2);
    let Reason::Cycle(w) = &reasons[0] else { panic!("{reasons:?}") };
    assert_eq!((w.0[0].from.as_str(), w.0[0].to.as_str()), ("4", "1"));
    assert!(reasons.iter().any(|r| matches!(r, Reason::Effectful { callee, .. } if callee == "send-email")));
    assert!(reasons.iter().any(|r| matches!(r, Reason::NonCoreLane { .. })));
    assert!(reasons.iter().any(|r| r.to_string().starts_with("cycle 4 -no→ 1")));

    let mut lib = AutomationLibrary::new();
    let report = lib.admit(&d, 1000, "2025-01-01T00:00:00.000Z").unwrap_err();
    assert!(!report.admitted);
    assert!(report.reasons.len() >= 2);
    assert!(lib.is_empty());
}

#[test]
fn back_edge_is_a_cycle() {
    let d = mutate(FIVE_A, "    5a. [milestone] \"Return Result\" @system --> 1:\n");
    let reasons = check_admissibility(&d).unwrap_err();
    assert!(matches!(&reasons[0], Reason::Cycle(_)), "{reasons:?}");
}

#[test]
fn admit_is_idempotent() {
    let d = parse(SUM);
    let mut lib = AutomationLibrary::new();
    let a = lib.admit(&d, 1000, "2025-01-01T00:00:00.000Z").unwrap();
    assert_eq!(a.requires, vec![p("(:ne $.a null)"), p("(:ne $.b null)")]);
    assert_eq!(a.ensures, vec![p("(:gte $.return.sum 0)")]);
    assert_eq!(a.slug, d.slug);
    assert_eq!(a.content_hash, d.content_hash);
    let again = lib.admit(&d, 1000, "2025-06-01T00:00:00.000Z").unwrap();
    assert_eq!(again.id, a.id);
    assert_eq!(again, a);
    assert_eq!(lib.len(), 1);

    // round-trips through JSON for storage
    let j = serde_json::to_string(&a).unwrap();
    assert_eq!(serde_json::from_str::<verifier::Automation>(&j).unwrap(), a);
}

#[test]
fn report_is_deterministic_text() {
    let r1 = verifier::verify(&parse(SUM), 200);
    let r2 = verifier::verify(&parse(SUM), 200);
    assert_eq!(r1, r2);
    let text = r1.to_string();
    assert_eq!(text, r2.to_string());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "structure ok");
    assert_eq!(*lines.last().unwrap(), "verdict admitted");
    let obligation_lines = lines.iter().filter(|l| l.starts_with("obligation ")).count();
    assert_eq!(obligation_lines, r1.obligations.len());
    assert!(text.contains("obligation edge:1->3 edge-composition proven contextual\n"));
    assert!(text.contains("obligation property:2:is-commutative property-empirical empirically-passed samples 200\n"));

    let bad = verifier::verify(&mutate(FIVE_A, &format!("{FIVE_A}      requires: (:gte $.sum 1)\n")), 200).to_string();
    assert!(bad.contains("obligation edge:4-yes->5a edge-composition refuted witness"), "{bad}");
    assert!(bad.ends_with("verdict rejected\n"));
}

#[test]
fn non_commutative_claim_fails_empirically() {
    let d = mutate(".a: $.b\n          .b: $.b", ".a: $.a\n          .b: $.b");
    let r = verifier::verify(&d, 300);
    let o = find(&r.obligations, "property:2:is-commutative");
    let Status::EmpiricallyFailed { counterexample } = &o.status else { panic!("{o}") };
    let (a, b) = (counterexample.0["a"].as_f64().unwrap(), counterexample.0["b"].as_f64().unwrap());
    // a² + ab differs from b² + ab
    assert_ne!(a * a + a * b, b * b + b * a);
    // and bSquared := a·b is no longer provably non-negative
    assert!(matches!(find(&r.obligations, "contract:2").status, Status::Refuted { .. }));
    assert!(!r.admitted);
}

const DOWNSTREAM: &str = "diagram \"Consume\":\n  swimlanes:\n    - \"System\"\n  inputs: {\n    .a: :number\n  }\n  requires:\n    - REQ\n  model:\n    1. [milestone] \"Done\" @system:\n";

fn downstream(req: Option<&str>) -> verifier::Automation {
    let src = match req {
        Some(r) => DOWNSTREAM.replace("REQ", r),
        None => DOWNSTREAM.replace("  requires:\n    - REQ\n", ""),
    };
    AutomationLibrary::new().admit(&parse(&src), 50, "t").unwrap()
}

#[test]
fn composition() {
    let up = AutomationLibrary::new().admit(&parse(SUM), 100, "t").unwrap();
    let bind = BTreeMap::from([("a".to_string(), Path::parse("$.return.sum").unwrap())]);
    assert_eq!(check_composition(&up, &downstream(Some("(:ne $.a null)")), &bind), Ok(Implication::Proven));
    let Ok(Implication::Refuted(w)) = check_composition(&up, &downstream(Some("(:gte $.a 1)")), &bind) else { panic!() };
    assert_eq!(w.get(&Path::parse("$.a").unwrap()), Some(&Value::Number(0.0)));
    assert_eq!(check_composition(&up, &downstream(None), &bind), Ok(Implication::Proven));
    assert_eq!(
        check_composition(&up, &downstream(Some("(:ne $.a null)")), &BTreeMap::new()),
        Err(BindingError::Unbound("a".into()))
    );
    let extra = BTreeMap::from([("a".into(), Path::parse("$.return.sum").unwrap()), ("z".into(), Path::parse("$.return.sum").unwrap())]);
    assert_eq!(check_composition(&up, &downstream(None), &extra), Err(BindingError::UnknownInput("z".into())));
}

/// The compile-time evaluator and the durable runtime agree on outcomes.
#[test]
fn evaluator_matches_runtime() {
    let d = Arc::new(parse(SUM));
    let lib = BTreeMap::from([(d.slug.clone(), d.clone())]);
    let mut store = MemoryStore::new();
    store.create_workspace("w").unwrap();
    let mut inputs = valid_samples(&d, 200);
    inputs.push(BTreeMap::from([("a".into(), Value::Null), ("b".into(), Value::Number(1.0))]));
    for (i, inp) in inputs.iter().enumerate() {
        let e = evaluate(&d, inp);
        let mut fx = BasicEffects::simulated(FaultSchedule::Never);
        let req = StartRequest { inputs: inp.clone(), ..Default::default() };
        let v = match runtime::start_run(&mut store, "w", &format!("r{i}"), &d, &lib, &req, &mut fx) {
            Err(EngineError::PreconditionViolation { failed, .. }) => {
                let Outcome::Precondition(ps) = &e.outcome else { panic!("runtime rejected {inp:?}") };
                assert_eq!(ps.iter().map(|p| p.to_string()).collect::<Vec<_>>(), failed);
                continue;
            }
            r => r.unwrap(),
        };
        match (&e.outcome, &v.status) {
            (Outcome::Returned, RunStatus::Completed) => {
                assert_eq!(v.sigma, e.sigma);
                assert_eq!(v.trace.iter().map(|t| t.node.clone()).collect::<Vec<_>>(), e.trace);
            }
            (Outcome::Threw { node, message, .. }, RunStatus::Errored(f)) => {
                assert_eq!(f.reason, FailureReason::Throw);
                assert_eq!(f.node.as_deref(), Some(node.as_str()));
                assert_eq!(&f.message, message);
            }
            other => panic!("disagreement on {inp:?}: {other:?}"),
        }
    }
}
