//! Discharging obligations: logical ones by implication, property claims by
//! sampled execution under the compile-time evaluator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::{evaluate, Evaluation, Outcome};
use super::{Goal, Obligation, ObligationKind, Source, Status};
use crate::diagram::Diagram;
use crate::predicate::eval::eval_all;
use crate::predicate::{implies, ClaimKind, Implication, NoResources, PropertyClaim};
use crate::value::{Path, State, Value};

pub const DEFAULT_BUDGET: usize = 1000;
pub const SAMPLE_BOUND: f64 = 1e6;

pub type Inputs = BTreeMap<String, Value>;

/// Seed for a diagram's input stream, from its content hash.
pub fn seed(d: &Diagram) -> u64 {
    let head: String = d.content_hash.chars().filter(char::is_ascii_hexdigit).take(16).collect();
    u64::from_str_radix(&head, 16).unwrap_or(0)
}

/// Boundary combinations first, then uniform draws.
pub struct Sampler {
    names: Vec<(String, String)>,
    grid: Vec<Vec<Value>>,
    next_grid: usize,
    grid_size: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(d: &Diagram, seed: u64) -> Self {
        let names: Vec<(String, String)> = d
            .inputs
            .iter()
            .map(|(k, t)| (k.clone(), match t {
                Value::Keyword(k) => k.clone(),
                _ => String::from("any"),
            }))
            .collect();
        let grid: Vec<Vec<Value>> = names.iter().map(|(_, t)| boundary_values(t)).collect();
        let grid_size = grid.iter().map(Vec::len).try_fold(1usize, |a, n| a.checked_mul(n)).unwrap_or(usize::MAX);
        Sampler { names, grid, next_grid: 0, grid_size, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    fn random_value(&mut self, ty: &str) -> Value {
        match ty {
            "string" => Value::Str(format!("s{}", self.rng.random::<u32>())),
            "boolean" => Value::Bool(self.rng.random()),
            "keyword" => Value::Keyword(format!("k{}", self.rng.random_range(0..8u32))),
            _ => Value::Number(self.rng.random_range(-SAMPLE_BOUND..=SAMPLE_BOUND)),
        }
    }
}

impl Iterator for Sampler {
    type Item = Inputs;

    fn next(&mut self) -> Option<Inputs> {
        let mut out = Inputs::new();
        if self.next_grid < self.grid_size {
            let mut i = self.next_grid;
            self.next_grid += 1;
            for ((k, _), vals) in self.names.iter().zip(&self.grid) {
                out.insert(k.clone(), vals[i % vals.len()].clone());
                i /= vals.len();
            }
            return Some(out);
        }
        let names = self.names.clone();
        for (k, t) in names {
            let v = self.random_value(&t);
            out.insert(k, v);
        }
        Some(out)
    }
}

fn boundary_values(ty: &str) -> Vec<Value> {
    match ty {
        "number" | "any" => alloc::vec![Value::Null, Value::Number(0.0), Value::Number(1.0), Value::Number(-1.0)],
        "string" => alloc::vec![Value::Null, Value::Str(String::new())],
        "boolean" => alloc::vec![Value::Null, Value::Bool(true), Value::Bool(false)],
        _ => alloc::vec![Value::Null],
    }
}

/// Up to `budget` inputs satisfying the diagram requires.
pub fn valid_samples(d: &Diagram, budget: usize) -> Vec<Inputs> {
    let sampler = Sampler::new(d, seed(d));
    let attempts = budget.saturating_mul(20).saturating_add(sampler.grid_size().min(budget));
    let state = |i: &Inputs| super::eval::sigma0(d, i);
    sampler.take(attempts).filter(|i| eval_all(&d.requires, &state(i), &NoResources) == Ok(true)).take(budget).collect()
}

pub fn discharge(d: &Diagram, obs: &[Obligation], budget: usize) -> Vec<Obligation> {
    let mut samples: Option<Vec<Inputs>> = None;
    let mut runs: Option<Vec<Evaluation>> = None;
    obs.iter()
        .map(|ob| {
            let mut ob = ob.clone();
            ob.status = match &ob.goal {
                Goal::Predicate(p) => match implies(&ob.antecedent, p) {
                    Implication::Proven => Status::Proven,
                    Implication::Unknown => Status::Unknown,
                    Implication::Refuted(witness) => {
                        let s = samples.get_or_insert_with(|| valid_samples(d, budget));
                        let r = runs.get_or_insert_with(|| s.iter().map(|i| evaluate(d, i)).collect());
                        let inputs = s.iter().zip(r.iter()).find(|(_, e)| reproduces(d, &ob, e)).map(|(i, _)| State(i.clone()));
                        Status::Refuted { witness, inputs }
                    }
                },
                Goal::Claim(c) => {
                    let s = samples.get_or_insert_with(|| valid_samples(d, budget));
                    check_claim(d, c, s)
                }
            };
            ob
        })
        .collect()
}

/// Whether a concrete run exhibits the violation an obligation predicts.
fn reproduces(d: &Diagram, ob: &Obligation, e: &Evaluation) -> bool {
    let at = |node: &str, phase: &str| e.violations.iter().any(|v| v.node == node && v.phase == phase);
    match (&ob.kind, &ob.source) {
        (ObligationKind::Edge, Source::Edge(edge)) => e.trace.contains(&edge.from) && at(&edge.to, "requires"),
        (ObligationKind::Entry, Source::Node(n)) => at(n, "requires"),
        (ObligationKind::Contract, Source::Node(n)) => at(n, "ensures"),
        (ObligationKind::Exit, Source::Node(n)) => e.trace.last() == Some(n) && !e.failed_ensures(d).is_empty(),
        _ => false,
    }
}

fn swapped(i: &Inputs, x: &Path, y: &Path) -> Inputs {
    let mut s = State(i.clone());
    let (vx, vy) = (s.get(x).cloned().unwrap_or(Value::Null), s.get(y).cloned().unwrap_or(Value::Null));
    s.set(x, vy);
    s.set(y, vx);
    s.0
}

fn same_observation(a: &Evaluation, b: &Evaluation) -> bool {
    let kind = |e: &Evaluation| match &e.outcome {
        Outcome::Returned => String::from("returned"),
        Outcome::Threw { node, message, .. } => format!("threw {node} {message}"),
        other => format!("{other:?}"),
    };
    kind(a) == kind(b) && a.ret() == b.ret()
}

pub fn check_claim(d: &Diagram, c: &PropertyClaim, samples: &[Inputs]) -> Status {
    if samples.is_empty() {
        return Status::Unknown;
    }
    for i in samples {
        let e = evaluate(d, i);
        let ok = match c.kind {
            ClaimKind::IsDeterministic => {
                let again = evaluate(d, i);
                let paths: Vec<&Path> = c.args.iter().filter_map(|t| t.as_path()).collect();
                again.outcome == e.outcome
                    && if paths.is_empty() { again.sigma == e.sigma } else { paths.iter().all(|p| again.sigma.get(p) == e.sigma.get(p)) }
            }
            ClaimKind::IsTotal => matches!(e.outcome, Outcome::Returned | Outcome::Threw { guarded: true, .. }),
            ClaimKind::IsCommutative => {
                let (Some(x), Some(y)) = (c.args.first().and_then(|t| t.as_path()), c.args.get(1).and_then(|t| t.as_path())) else {
                    return Status::Unknown;
                };
                same_observation(&e, &evaluate(d, &swapped(i, x, y)))
            }
            ClaimKind::AssumedBoundary => true,
        };
        if !ok {
            return Status::EmpiricallyFailed { counterexample: State(i.clone()) };
        }
    }
    Status::EmpiricallyPassed { samples: samples.len() }
}
