use alloc::string::{String, ToString};

use super::{CmpOp, Predicate, Term};
use crate::value::{Path, State, Value};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, thiserror::Error)]
pub enum EvalError {
    #[error("undefined variable {0}")]
    UndefinedVar(Path),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("unknown resource {0}")]
    UnknownResource(String),
}

/// Tag lookups for `(:with-tag ...)`.
pub trait ResourceContext {
    fn has_tag(&self, resource: &Value, tag: &str) -> Result<bool, EvalError>;
}

/// A context with no resources; every tag test fails with `UnknownResource`.
pub struct NoResources;

impl ResourceContext for NoResources {
    fn has_tag(&self, resource: &Value, _tag: &str) -> Result<bool, EvalError> {
        Err(EvalError::UnknownResource(resource_id(resource).unwrap_or("?").to_string()))
    }
}

/// A resource reference is either an id string or a map carrying `id`.
pub fn resource_id(v: &Value) -> Option<&str> {
    match v {
        Value::Str(s) => Some(s),
        Value::Map(m) => m.get("id").and_then(Value::as_str),
        _ => None,
    }
}

fn lookup<'a>(t: &'a Term, s: &'a State) -> Option<&'a Value> {
    match t {
        Term::Path(p) => s.get(p),
        Term::Lit(v) => Some(v),
    }
}

fn undefined(t: &Term) -> EvalError {
    EvalError::UndefinedVar(t.as_path().cloned().expect("only paths can be unbound"))
}

/// Structural equality; values of different types are unequal.
pub fn values_equal(a: &Value, b: &Value) -> bool {
    a == b
}

fn compare(op: CmpOp, lhs: &Term, rhs: &Term, s: &State) -> Result<bool, EvalError> {
    let is_null_lit = |t: &Term| matches!(t, Term::Lit(Value::Null));
    if !op.is_ordering() && (is_null_lit(lhs) || is_null_lit(rhs)) {
        // Null tests treat an unbound path as null.
        let other = if is_null_lit(lhs) { rhs } else { lhs };
        let null = lookup(other, s).is_none_or(Value::is_null);
        return Ok(if op == CmpOp::Eq { null } else { !null });
    }
    let a = lookup(lhs, s).ok_or_else(|| undefined(lhs))?;
    let b = lookup(rhs, s).ok_or_else(|| undefined(rhs))?;
    if !op.is_ordering() {
        let eq = values_equal(a, b);
        return Ok(if op == CmpOp::Eq { eq } else { !eq });
    }
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => Ok(op.apply_f64(*x, *y)),
        _ => Err(EvalError::TypeMismatch(alloc::format!(":{} on {} and {}", op.name(), a.type_name(), b.type_name()))),
    }
}

/// Evaluates a predicate against a state.
///
/// `(:and ...)` is false when any operand is false, even if another operand
/// errors; otherwise the least error is reported. This keeps conjunction
/// commutative. `(:or ...)` is the dual.
pub fn eval(p: &Predicate, s: &State, ctx: &dyn ResourceContext) -> Result<bool, EvalError> {
    match p {
        Predicate::Compare { op, lhs, rhs } => compare(*op, lhs, rhs, s),
        Predicate::And(ps) | Predicate::Or(ps) => {
            let dominant = matches!(p, Predicate::Or(_));
            let mut err: Option<EvalError> = None;
            for q in ps {
                match eval(q, s, ctx) {
                    Ok(b) if b == dominant => return Ok(dominant),
                    Ok(_) => {}
                    Err(e) => {
                        if err.as_ref().is_none_or(|cur| e < *cur) {
                            err = Some(e);
                        }
                    }
                }
            }
            match err {
                Some(e) => Err(e),
                None => Ok(!dominant),
            }
        }
        Predicate::Not(q) => eval(q, s, ctx).map(|b| !b),
        Predicate::WithTag { resource, tag } => {
            let r = lookup(resource, s).ok_or_else(|| undefined(resource))?;
            ctx.has_tag(r, tag)
        }
    }
}

/// Evaluates every predicate; true when all hold.
pub fn eval_all(ps: &[Predicate], s: &State, ctx: &dyn ResourceContext) -> Result<bool, EvalError> {
    if ps.is_empty() {
        return Ok(true);
    }
    eval(&Predicate::And(ps.to_vec()), s, ctx)
}
