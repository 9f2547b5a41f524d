//! Contract mutants of the bounded sum-of-squares automation, and the
//! independent probes that judge them.

use std::collections::BTreeMap;
use std::sync::Arc;

use graphflow_core::diagram::{self, Diagram};
use graphflow_core::predicate::{eval, parse_predicate, ClaimKind, NoResources};
use graphflow_core::runtime::{self, BasicEffects, FailureReason, FaultSchedule, RunStatus, StartRequest};
use graphflow_core::store::{EventStore, MemoryStore};
use graphflow_core::verifier::eval::{evaluate, Outcome};
use graphflow_core::verifier::AutomationLibrary;
use graphflow_core::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SUM: &str = include_str!("../../../../corpus/sum_of_squares.gfl");

pub fn parse(src: &str) -> Diagram {
    diagram::from_source(src, None).unwrap()
}

pub fn inputs(a: f64, b: f64) -> BTreeMap<String, Value> {
    BTreeMap::from([("a".into(), Value::Number(a)), ("b".into(), Value::Number(b))])
}

/// Runs the automation once and checks the outcome against its contract.
pub fn check_run(d: &Arc<Diagram>, a: f64, b: f64) -> Result<(), String> {
    let lib = BTreeMap::from([(d.slug.clone(), d.clone())]);
    let mut store = MemoryStore::new();
    store.create_workspace("w").unwrap();
    let mut fx = BasicEffects::simulated(FaultSchedule::Never);
    let req = StartRequest { inputs: inputs(a, b), ..Default::default() };
    let v = runtime::start_run(&mut store, "w", "r", d, &lib, &req, &mut fx).map_err(|e| e.to_string())?;
    let ensures = parse_predicate("(:gte $.return.sum 0)").unwrap();
    match &v.status {
        RunStatus::Completed if eval(&ensures, &v.sigma, &NoResources) == Ok(true) && a * a + b * b <= 1000.0 => Ok(()),
        RunStatus::Errored(f)
            if f.reason == FailureReason::Throw
                && f.node.as_deref().and_then(|n| d.node(n)).is_some_and(|n| n.has_claim(ClaimKind::AssumedBoundary))
                && a * a + b * b > 1000.0 =>
        {
            Ok(())
        }
        other => Err(format!("a={a} b={b}: {other:?} sigma {}", v.sigma.canonical())),
    }
}

/// Independent probe inputs: an integer grid around the bound, boundary
/// values and seeded uniform draws.
pub fn probes() -> Vec<BTreeMap<String, Value>> {
    let mut out = Vec::new();
    for a in -32..=32 {
        for b in -32..=32 {
            out.push(inputs(a.into(), b.into()));
        }
    }
    let special = [Value::Null, Value::Number(0.5), Value::Number(-0.5), Value::Number(22.36), Value::Number(1e6)];
    for x in &special {
        for y in &special {
            out.push(BTreeMap::from([("a".into(), x.clone()), ("b".into(), y.clone())]));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    while out.len() < 10_000 {
        out.push(inputs(rng.random_range(-1e6..=1e6), rng.random_range(-1e6..=1e6)));
    }
    out
}

/// A run that breaks the diagram's own contract story.
pub fn violates(d: &Diagram, inp: &BTreeMap<String, Value>) -> Option<String> {
    let e = evaluate(d, inp);
    if let Some(v) = e.violations.first() {
        return Some(format!("{} {} {} fails", v.node, v.phase, v.predicate));
    }
    match &e.outcome {
        Outcome::Returned => e.failed_ensures(d).first().map(|p| format!("ensures {p} fails")),
        Outcome::Threw { node, .. } if d.node(node).is_some_and(|n| n.has_claim(ClaimKind::AssumedBoundary)) => None,
        Outcome::Precondition(_) => None,
        other => Some(format!("{other:?}")),
    }
}

const FIVE_A: &str = "    5a. [milestone] \"Return Result\" @system:\n";

/// Single mutations that strengthen a requires or weaken an ensures, or
/// otherwise break the diagram.
pub fn mutants() -> Vec<(&'static str, String)> {
    let m = |from: &str, to: &str| {
        assert!(SUM.contains(from), "anchor {from:?}");
        SUM.replacen(from, to, 1)
    };
    vec![
        ("5a requires sum >= 1", m(FIVE_A, &format!("{FIVE_A}      requires: (:gte $.sum 1)\n"))),
        ("3 requires aSquared > 0", m("requires: (:and (:ne $.aSquared null)", "requires: (:and (:gt $.aSquared 0) (:ne $.aSquared null)")),
        ("diagram ensures sum >= 1", m("    - (:gte $.return.sum 0)\n", "    - (:gte $.return.sum 1)\n")),
        ("diagram ensures sum <= 999", m("    - (:gte $.return.sum 0)\n", "    - (:lte $.return.sum 999)\n")),
        ("bound check widened", m(".yes: (:lte $.sum 1000)", ".yes: (:lte $.sum 2000)")),
        ("1 squares a*b", m(".a: $.a\n          .b: $.a", ".a: $.a\n          .b: $.b")),
        ("branches swapped", m(":yes--> 5a :no--> 5b", ":yes--> 5b :no--> 5a")),
        ("3 ensures sum > 0", m("ensures: (:gte $.sum 0)", "ensures: (:gt $.sum 0)")),
        ("a may be null", m("    - (:ne $.a null)\n", "")),
        ("3 adds -1", m(".b: $.bSquared", ".b: -1")),
        ("2 ensures bSquared > 0", m("ensures: (:gte $.bSquared 0)", "ensures: (:gt $.bSquared 0)")),
        ("5a returns aSquared", m(".sum: $.sum\n", ".sum: $.aSquared\n")),
        ("3 multiplies", m("calls: (:add {\n          .a: $.aSquared", "calls: (:multiply {\n          .a: $.aSquared")),
        ("bound check tightened", m(".yes: (:lte $.sum 1000)", ".yes: (:lte $.sum 10)")),
    ]
}


pub struct Verdict {
    pub name: &'static str,
    pub admitted: bool,
    pub violation: Option<String>,
}

pub fn mutation_suite() -> Vec<Verdict> {
    let probes = probes();
    mutants()
        .into_iter()
        .map(|(name, src)| {
            let d = parse(&src);
            let admitted = AutomationLibrary::new().admit(&d, 1000, "t").is_ok();
            let violation = probes.iter().find_map(|i| violates(&d, i));
            Verdict { name, admitted, violation }
        })
        .collect()
}
