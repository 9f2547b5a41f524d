//! Obligation generation by symbolic path exploration.
//!
//! Each path follows the runtime's sequential schedule, forking at
//! decisions. The context at a node is the diagram requires plus what every
//! earlier node on the path established: builtin result facts, declared
//! ensures and branch conditions. Assignments drop facts about the target.
//! An obligation reached along several paths keeps the facts common to all.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{Goal, Obligation, ObligationKind, Source, Status};
use crate::diagram::{ActionBinding, Diagram, Edge, Schedule};
use crate::gfl::{EdgeLabel, Expr, NodeType};
use crate::predicate::{abstract_state, ClaimKind, CmpOp, NumRange, Predicate, Term};
use crate::value::{Path, Value};

/// Paths explored before giving up.
pub const MAX_PATHS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub obligations: Vec<Obligation>,
    /// Exploration hit [`MAX_PATHS`] or a revisit; the set is incomplete.
    pub truncated: bool,
}

pub fn generate_obligations(d: &Diagram) -> Vec<Obligation> {
    generate(d).obligations
}

#[derive(Clone)]
struct PathState {
    sched: Schedule,
    ctx: Vec<Predicate>,
    /// Edges that activated each pending node.
    via: BTreeMap<String, Vec<Edge>>,
    last: Option<String>,
}

struct Collector {
    order: Vec<String>,
    found: BTreeMap<String, (Obligation, Vec<Vec<Predicate>>)>,
}

impl Collector {
    fn add(&mut self, id: String, kind: ObligationKind, source: Source, ctx: &[Predicate], consequent: Predicate, contextual: bool) {
        let e = self.found.entry(id.clone()).or_insert_with(|| {
            self.order.push(id.clone());
            let ob = Obligation { id, kind, source, antecedent: Vec::new(), goal: Goal::Predicate(consequent), contextual, status: Status::Pending };
            (ob, Vec::new())
        });
        e.1.push(ctx.to_vec());
    }

    fn finish(self) -> Vec<Obligation> {
        let mut found = self.found;
        self.order
            .into_iter()
            .map(|id| {
                let (mut ob, ctxs) = found.remove(&id).expect("ordered ids are present");
                let (first, rest) = ctxs.split_first().expect("added with a context");
                ob.antecedent = first.iter().filter(|p| rest.iter().all(|c| c.contains(p))).cloned().collect();
                ob
            })
            .collect()
    }
}

pub fn generate(d: &Diagram) -> Generated {
    let mut col = Collector { order: Vec::new(), found: BTreeMap::new() };
    let mut truncated = false;
    let mut initial = Vec::new();
    for p in &d.requires {
        push_atoms(&mut initial, p);
    }
    for (p, v) in &d.variables {
        if let Some(a) = literal_fact(p, v) {
            push_atoms(&mut initial, &a);
        }
    }
    let mut stack = vec![PathState { sched: Schedule::start(d), ctx: initial, via: BTreeMap::new(), last: None }];
    let mut explored = 0usize;
    while let Some(mut st) = stack.pop() {
        explored += 1;
        if explored > MAX_PATHS {
            truncated = true;
            break;
        }
        // Runs one path until it ends or forks.
        loop {
            let Some(id) = st.sched.pick(d) else {
                if let Some(last) = &st.last {
                    if !d.ensures.is_empty() {
                        let goal = Predicate::and(d.ensures.clone());
                        col.add(format!("exit:{last}"), ObligationKind::Exit, Source::Node(last.clone()), &st.ctx, goal, true);
                    }
                }
                break;
            };
            let node = d.node(&id).expect("scheduled nodes exist");
            if st.sched.enter(&id) > 1 {
                truncated = true;
                break;
            }
            let requires = node.all_requires();
            if !requires.is_empty() {
                let goal = Predicate::and(requires.into_iter().cloned().collect());
                let via = st.via.remove(&id).unwrap_or_default();
                if via.is_empty() {
                    let contextual = st.last.is_some();
                    col.add(format!("entry:{id}"), ObligationKind::Entry, Source::Node(id.clone()), &st.ctx, goal, contextual);
                } else {
                    for e in via {
                        col.add(edge_id(&e), ObligationKind::Edge, Source::Edge(e), &st.ctx, goal.clone(), true);
                    }
                }
            } else {
                st.via.remove(&id);
            }
            st.last = Some(id.clone());
            if node.node_type == NodeType::Decision {
                let cond = node.action.as_ref().filter(|a| a.callee == "condition").and_then(|a| a.condition.as_ref());
                let mut forks = Vec::new();
                for label in [EdgeLabel::Yes, EdgeLabel::No, EdgeLabel::Maybe] {
                    let Some(edge) = d.out_edges(&id).find(|e| e.label == label) else { continue };
                    let mut next = st.clone();
                    match (cond, label) {
                        (Some(c), EdgeLabel::Yes) => push_atoms(&mut next.ctx, c),
                        (Some(c), EdgeLabel::No) => push_atoms(&mut next.ctx, &complement(c)),
                        _ => {}
                    }
                    contract(&mut col, node.id.as_str(), node.all_ensures(), &mut next.ctx);
                    next.via.entry(edge.to.clone()).or_default().push(edge.clone());
                    next.sched.complete(&id, core::slice::from_ref(&edge.to));
                    forks.push(next);
                }
                if forks.is_empty() {
                    // No branch edges: the frame ends here.
                    contract(&mut col, node.id.as_str(), node.all_ensures(), &mut st.ctx);
                    st.sched.complete(&id, &[]);
                    continue;
                }
                // Depth-first in yes, no, maybe order.
                stack.extend(forks.into_iter().rev());
                break;
            }
            if let Some(a) = &node.action {
                if a.callee == "throw" {
                    // A throwing path never reaches an exit.
                    break;
                }
                apply_action(&mut st.ctx, a);
            }
            contract(&mut col, node.id.as_str(), node.all_ensures(), &mut st.ctx);
            let next: Vec<String> = d.out_edges(&id).filter(|e| e.label == EdgeLabel::To).map(|e| e.to.clone()).collect();
            for e in d.out_edges(&id).filter(|e| e.label == EdgeLabel::To) {
                st.via.entry(e.to.clone()).or_default().push(e.clone());
            }
            st.sched.complete(&id, &next);
        }
    }
    let mut obligations = col.finish();
    for (i, claim) in d.properties.iter().enumerate() {
        if claim.kind == ClaimKind::AssumedBoundary {
            continue;
        }
        obligations.push(Obligation {
            id: format!("property:{i}:{}", claim.kind.name()),
            kind: ObligationKind::Property,
            source: Source::Diagram,
            antecedent: d.requires.clone(),
            goal: Goal::Claim(claim.clone()),
            contextual: false,
            status: Status::Pending,
        });
    }
    Generated { obligations, truncated }
}

fn edge_id(e: &Edge) -> String {
    match e.label {
        EdgeLabel::To => format!("edge:{}->{}", e.from, e.to),
        l => format!("edge:{}-{}->{}", e.from, l.name(), e.to),
    }
}

/// Declared ensures after an action: one obligation, then assumed.
fn contract(col: &mut Collector, node: &str, ensures: Vec<&Predicate>, ctx: &mut Vec<Predicate>) {
    if ensures.is_empty() {
        return;
    }
    let goal = Predicate::and(ensures.iter().map(|p| (*p).clone()).collect());
    col.add(format!("contract:{node}"), ObligationKind::Contract, Source::Node(node.to_string()), ctx, goal, true);
    for p in ensures {
        push_atoms(ctx, p);
    }
}

fn push_atoms(ctx: &mut Vec<Predicate>, p: &Predicate) {
    for a in p.conjuncts() {
        if !ctx.contains(a) {
            ctx.push(a.clone());
        }
    }
}

fn kill(ctx: &mut Vec<Predicate>, target: &Path) {
    ctx.retain(|p| !p.paths().iter().any(|q| q.overlaps(target)));
}

/// The negation of a branch condition, exact for comparisons.
pub fn complement(c: &Predicate) -> Predicate {
    match c {
        Predicate::Compare { op, lhs, rhs } => Predicate::cmp(op.negate(), lhs.clone(), rhs.clone()),
        Predicate::Or(ps) if ps.iter().all(|p| matches!(p, Predicate::Compare { .. })) => {
            Predicate::And(ps.iter().map(complement).collect())
        }
        Predicate::Not(p) => (**p).clone(),
        other => Predicate::Not(alloc::boxed::Box::new(other.clone())),
    }
}

fn literal_fact(p: &Path, v: &Value) -> Option<Predicate> {
    match v {
        Value::Null | Value::Number(_) | Value::Bool(_) | Value::Str(_) | Value::Keyword(_) => {
            Some(Predicate::cmp(CmpOp::Eq, Term::Path(p.clone()), Term::Lit(v.clone())))
        }
        _ => None,
    }
}

/// Facts implied by a numeric range, plus non-nullness.
fn range_facts(p: &Path, r: &NumRange) -> Vec<Predicate> {
    let t = || Term::Path(p.clone());
    let mut out = vec![Predicate::cmp(CmpOp::Ne, t(), Term::Lit(Value::Null))];
    if r.lo.is_finite() {
        out.push(Predicate::cmp(if r.lo_closed { CmpOp::Gte } else { CmpOp::Gt }, t(), Term::num(r.lo)));
    }
    if r.hi.is_finite() {
        out.push(Predicate::cmp(if r.hi_closed { CmpOp::Lte } else { CmpOp::Lt }, t(), Term::num(r.hi)));
    }
    out
}

fn arg_range(ctx: &[Predicate], e: Option<&Expr>) -> NumRange {
    match e {
        Some(Expr::Number(n)) => NumRange::point(*n),
        Some(Expr::Path(p)) => match abstract_state(ctx) {
            // A failed call leaves no state, so only numeric outcomes matter.
            Ok(s) => s.fact(p).num.unwrap_or(NumRange::FULL),
            Err(_) => NumRange::FULL,
        },
        _ => NumRange::FULL,
    }
}

/// The registered contract of each builtin, applied to the context.
fn apply_action(ctx: &mut Vec<Predicate>, a: &ActionBinding) {
    let operand = |key: &str, i: usize| a.arg(key).or_else(|| a.positional.get(i));
    match a.callee.as_str() {
        "add" | "multiply" => {
            let (x, y) = (operand("a", 0), operand("b", 1));
            let (rx, ry) = (arg_range(ctx, x), arg_range(ctx, y));
            let r = if a.callee == "add" {
                rx.sum(&ry)
            } else if x.is_some() && x == y {
                rx.square()
            } else {
                rx.product(&ry)
            };
            if let Some(target) = &a.assigns {
                kill(ctx, target);
                for f in range_facts(target, &r) {
                    push_atoms(ctx, &f);
                }
            }
        }
        "return" => {
            let mut facts = Vec::new();
            for (k, e) in &a.args {
                let target = Path::new(vec!["return".into(), k.clone()]).expect("nonempty");
                match e {
                    Expr::Path(src) => {
                        for p in ctx.iter().filter(|p| {
                            let ps = p.paths();
                            !ps.is_empty() && ps.iter().all(|q| *q == src)
                        }) {
                            facts.push(p.map_paths(&|q: &Path| (q == src).then(|| target.clone())));
                        }
                    }
                    lit => {
                        if let Some(f) = lit.to_literal().and_then(|v| literal_fact(&target, &v)) {
                            facts.push(f);
                        }
                    }
                }
                kill(ctx, &target);
            }
            for f in facts {
                push_atoms(ctx, &f);
            }
        }
        // Anything else either assigns an unknown value or nothing.
        _ => {
            if let Some(target) = &a.assigns {
                kill(ctx, target);
            }
        }
    }
}
