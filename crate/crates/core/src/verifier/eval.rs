//! Compile-time evaluator for verified-core diagrams.
//!
//! Independent of the runtime interpreter so the two can be tested against
//! each other. Only builtins and core control flow are supported; contracts
//! are observed, never enforced.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::diagram::{Diagram, Schedule};
use crate::gfl::{EdgeLabel, NodeType};
use crate::predicate::{eval, NoResources, Predicate};
use crate::runtime::builtins::{self, BuiltinOutcome};
use crate::value::{Path, State, Value};

const STEP_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Returned,
    /// `guarded` when a decision branch was taken before the throw.
    Threw { node: String, message: String, guarded: bool },
    Failed { node: Option<String>, error: String },
    Precondition(Vec<Predicate>),
    /// A node the evaluator cannot run (waits, meetings, effectful calls).
    Unsupported { node: String },
}

/// A contract that did not evaluate to true.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: String,
    pub phase: &'static str,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcome: Outcome,
    pub sigma: State,
    pub trace: Vec<String>,
    pub violations: Vec<Violation>,
}

impl Evaluation {
    pub fn ret(&self) -> Option<&Value> {
        self.sigma.0.get("return")
    }

    /// Diagram ensures that fail on a normal return.
    pub fn failed_ensures<'d>(&self, d: &'d Diagram) -> Vec<&'d Predicate> {
        if self.outcome != Outcome::Returned {
            return Vec::new();
        }
        d.ensures.iter().filter(|p| eval(p, &self.sigma, &NoResources) != Ok(true)).collect()
    }
}

pub fn sigma0(d: &Diagram, inputs: &BTreeMap<String, Value>) -> State {
    let mut s = State::new();
    for (p, v) in &d.variables {
        s.set(p, v.clone());
    }
    if d.inputs.is_empty() {
        s.0.extend(inputs.iter().map(|(k, v)| (k.clone(), v.clone())));
    } else {
        for (k, _) in &d.inputs {
            s.0.insert(k.clone(), inputs.get(k).cloned().unwrap_or(Value::Null));
        }
    }
    s
}

pub fn evaluate(d: &Diagram, inputs: &BTreeMap<String, Value>) -> Evaluation {
    let mut ev = Evaluation { outcome: Outcome::Returned, sigma: sigma0(d, inputs), trace: Vec::new(), violations: Vec::new() };
    let failed: Vec<Predicate> = d.requires.iter().filter(|p| eval(p, &ev.sigma, &NoResources) != Ok(true)).cloned().collect();
    if !failed.is_empty() {
        ev.outcome = Outcome::Precondition(failed);
        return ev;
    }
    let mut sched = Schedule::start(d);
    let mut branched = false;
    while let Some(id) = sched.pick(d) {
        if ev.trace.len() >= STEP_LIMIT {
            ev.outcome = Outcome::Failed { node: Some(id), error: "step limit reached".into() };
            return ev;
        }
        let node = d.node(&id).expect("scheduled nodes exist");
        sched.enter(&id);
        ev.trace.push(id.clone());
        observe(&mut ev, &id, "requires", node.all_requires());
        let mut next: Vec<String> = d.out_edges(&id).filter(|e| e.label == EdgeLabel::To).map(|e| e.to.clone()).collect();
        let unsupported = Outcome::Unsupported { node: id.clone() };
        match node.node_type {
            NodeType::Decision => {
                let Some(c) = node.action.as_ref().filter(|a| a.callee == "condition").and_then(|a| a.condition.as_ref()) else {
                    ev.outcome = unsupported;
                    return ev;
                };
                let label = match eval(c, &ev.sigma, &NoResources) {
                    Ok(true) => EdgeLabel::Yes,
                    Ok(false) => EdgeLabel::No,
                    Err(e) => {
                        if d.successor(&id, EdgeLabel::Maybe).is_none() {
                            ev.outcome = Outcome::Failed { node: Some(id), error: e.to_string() };
                            return ev;
                        }
                        EdgeLabel::Maybe
                    }
                };
                branched = true;
                next = d.successor(&id, label).map(|t| alloc::vec![t.to_string()]).unwrap_or_default();
            }
            NodeType::Task | NodeType::Milestone | NodeType::Report => {
                if let Some(a) = &node.action {
                    if !builtins::is_builtin(&a.callee) {
                        ev.outcome = unsupported;
                        return ev;
                    }
                    match builtins::apply(a, &ev.sigma) {
                        Ok(BuiltinOutcome::Value(v)) => {
                            if let Some(p) = &a.assigns {
                                ev.sigma.set(p, v);
                            }
                        }
                        Ok(BuiltinOutcome::Return(m)) => {
                            for (k, v) in m {
                                ev.sigma.set(&Path::new(alloc::vec!["return".into(), k]).expect("nonempty"), v);
                            }
                        }
                        Ok(BuiltinOutcome::Throw(message)) => {
                            ev.outcome = Outcome::Threw { node: id, message, guarded: branched };
                            return ev;
                        }
                        Ok(BuiltinOutcome::Nothing) => {}
                        Err(e) => {
                            ev.outcome = Outcome::Failed { node: Some(id), error: e.to_string() };
                            return ev;
                        }
                    }
                }
            }
            _ => {
                ev.outcome = unsupported;
                return ev;
            }
        }
        observe(&mut ev, &id, "ensures", node.all_ensures());
        sched.complete(&id, &next);
    }
    ev
}

fn observe(ev: &mut Evaluation, node: &str, phase: &'static str, ps: Vec<&Predicate>) {
    for p in ps {
        if eval(p, &ev.sigma, &NoResources) != Ok(true) {
            ev.violations.push(Violation { node: node.to_string(), phase, predicate: p.clone() });
        }
    }
}
