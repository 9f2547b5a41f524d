//! Sound, incomplete implication between predicate conjunctions.
//!
//! `Proven` is returned only when the folded antecedent facts entail every
//! consequent atom, or the antecedent is unsatisfiable. `Refuted` carries a
//! concrete state that has been checked with [`eval`]: the antecedent is true
//! there and the consequent is false. Everything else is `Unknown`.

use alloc::vec::Vec;

use super::domain::{abstract_state, path_literal, AbstractState, NumRange, PathFact};
use super::eval::eval_all;
use super::{eval, CmpOp, NoResources, Nullability, Predicate, Term};
use crate::value::{Path, State, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Implication {
    Proven,
    Refuted(State),
    Unknown,
}

impl Implication {
    pub fn is_proven(&self) -> bool {
        matches!(self, Implication::Proven)
    }
}

pub fn implies(ante: &[Predicate], cons: &Predicate) -> Implication {
    let st = match abstract_state(ante) {
        Ok(s) => s,
        Err(_) => return Implication::Proven,
    };
    let ante_atoms: Vec<&Predicate> = ante.iter().flat_map(|p| p.conjuncts()).collect();
    let open: Vec<&Predicate> = cons.conjuncts().into_iter().filter(|a| !entailed(a, &st, &ante_atoms)).collect();
    if open.is_empty() {
        return Implication::Proven;
    }
    if !st.opaque.is_empty() {
        return Implication::Unknown;
    }
    let Some(base) = base_state(&st) else {
        return Implication::Unknown;
    };
    for atom in open {
        let Predicate::Compare { op, lhs, rhs } = atom else { continue };
        let Some((path, op, lit)) = path_literal(*op, lhs, rhs) else { continue };
        for cand in candidates(&st.fact(&path), op, &lit) {
            let mut sigma = base.clone();
            sigma.set(&path, cand);
            if valid_witness(ante, cons, &sigma) {
                return Implication::Refuted(sigma);
            }
        }
    }
    Implication::Unknown
}

/// True when `sigma` satisfies every antecedent and falsifies the consequent.
pub fn valid_witness(ante: &[Predicate], cons: &Predicate, sigma: &State) -> bool {
    eval_all(ante, sigma, &NoResources) == Ok(true) && eval(cons, sigma, &NoResources) == Ok(false)
}

fn entailed(atom: &Predicate, st: &AbstractState, ante_atoms: &[&Predicate]) -> bool {
    if ante_atoms.contains(&atom) {
        return true;
    }
    let Predicate::Compare { op, lhs, rhs } = atom else { return false };
    if let (Term::Lit(_), Term::Lit(_)) = (lhs, rhs) {
        return eval(atom, &State::new(), &NoResources) == Ok(true);
    }
    let Some((path, op, lit)) = path_literal(*op, lhs, rhs) else { return false };
    let f = st.fact(&path);
    match (op, &lit) {
        (CmpOp::Ne, Value::Null) => f.null == Nullability::NonNull,
        (CmpOp::Eq, Value::Null) => f.null == Nullability::Null,
        (CmpOp::Ne, Value::Number(n)) => f.num.is_some_and(|r| !r.contains(*n) && !r.is_empty()) || f.exact.is_some(),
        (CmpOp::Ne, v) => f.exact.as_ref().is_some_and(|e| e != v) || f.num.is_some(),
        (_, Value::Number(n)) => {
            let want = NumRange::from_op(op, *n).expect("not ne");
            f.num.is_some_and(|r| r.subset_of(&want))
        }
        (CmpOp::Eq, v) => f.exact.as_ref() == Some(v),
        _ => false,
    }
}

/// A state meeting every per-path fact, using representative values.
fn base_state(st: &AbstractState) -> Option<State> {
    let mut paths: Vec<(&Path, &PathFact)> = st.facts.iter().collect();
    paths.sort_by_key(|(p, _)| p.segments().len());
    let mut s = State::new();
    for (p, f) in paths {
        let v = if let Some(r) = f.num {
            Value::Number(r.representative()?)
        } else if let Some(e) = &f.exact {
            e.clone()
        } else {
            match f.null {
                Nullability::Null => Value::Null,
                Nullability::NonNull => Value::Number(0.0),
                Nullability::Unknown => continue,
            }
        };
        s.set(p, v);
    }
    Some(s)
}

/// Values for the atom's path that may falsify it. Each is checked by the caller.
fn candidates(f: &PathFact, op: CmpOp, lit: &Value) -> Vec<Value> {
    let range = f.num.unwrap_or(NumRange::FULL);
    let mut out = Vec::new();
    if let Value::Number(n) = lit {
        let complement = NumRange::from_op(op.negate(), *n);
        if let Some(c) = complement {
            out.extend(range.intersect(&c).representative().map(Value::Number));
        }
        for side in [CmpOp::Lt, CmpOp::Gt, CmpOp::Eq] {
            let r = NumRange::from_op(side, *n).expect("not ne");
            out.extend(range.intersect(&r).representative().map(Value::Number));
        }
    }
    out.extend(range.representative().map(Value::Number));
    if let Some(e) = &f.exact {
        out.push(e.clone());
    }
    if !lit.is_null() {
        out.push(lit.clone());
    }
    out.push(Value::Null);
    out.push(Value::Number(0.0));
    out.push(Value::Number(1.0));
    out.push(Value::Str(alloc::string::String::new()));
    out
}
