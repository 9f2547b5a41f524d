//! Pure deterministic actions that run in-process.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::diagram::ActionBinding;
use crate::gfl::Expr;
use crate::predicate::EvalError;
use crate::value::{State, Value};

/// Builtins admissible in the verified core.
pub const PURE_BUILTINS: [&str; 6] = ["add", "multiply", "return", "throw", "condition", "next"];

pub fn is_builtin(callee: &str) -> bool {
    PURE_BUILTINS.contains(&callee)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinOutcome {
    /// Value for the action's `assigns` path.
    Value(Value),
    /// Entries written under `$.return`.
    Return(BTreeMap<String, Value>),
    Throw(String),
    Nothing,
}

/// Evaluates an argument expression against σ. Unbound paths are errors.
pub fn eval_expr(e: &Expr, s: &State) -> Result<Value, EvalError> {
    Ok(match e {
        Expr::Path(p) => s.get(p).cloned().ok_or_else(|| EvalError::UndefinedVar(p.clone()))?,
        Expr::Map(m) => Value::Map(m.iter().map(|(k, v)| Ok((k.clone(), eval_expr(v, s)?))).collect::<Result<_, EvalError>>()?),
        Expr::List(items) => Value::List(items.iter().map(|v| eval_expr(v, s)).collect::<Result<_, _>>()?),
        Expr::Items(items) => Value::List(
            items
                .iter()
                .map(|entry| {
                    Ok(Value::Map(entry.iter().map(|(k, v)| Ok((k.clone(), eval_expr(v, s)?))).collect::<Result<_, EvalError>>()?))
                })
                .collect::<Result<_, EvalError>>()?,
        ),
        Expr::Call { .. } => Value::Str(e.to_text()),
        lit => lit.to_literal().expect("remaining variants are literals"),
    })
}

/// Evaluated `{ .key: term }` arguments as a map.
pub fn eval_args(a: &ActionBinding, s: &State) -> Result<Value, EvalError> {
    let mut m = BTreeMap::new();
    for (k, e) in &a.args {
        m.insert(k.clone(), eval_expr(e, s)?);
    }
    if !a.positional.is_empty() {
        let pos = a.positional.iter().map(|e| eval_expr(e, s)).collect::<Result<Vec<_>, _>>()?;
        m.insert("_".to_string(), Value::List(pos));
    }
    Ok(Value::Map(m))
}

fn number(a: &ActionBinding, key: &str, idx: usize, s: &State) -> Result<f64, EvalError> {
    let e = a.arg(key).or_else(|| a.positional.get(idx)).ok_or_else(|| EvalError::TypeMismatch(alloc::format!(":{} needs .{key}", a.callee)))?;
    match eval_expr(e, s)? {
        Value::Number(n) => Ok(n),
        other => Err(EvalError::TypeMismatch(alloc::format!(":{} on {}", a.callee, other.type_name()))),
    }
}

/// Runs a builtin. `:condition` is handled by decision nodes and is a no-op here.
pub fn apply(a: &ActionBinding, s: &State) -> Result<BuiltinOutcome, EvalError> {
    Ok(match a.callee.as_str() {
        "add" => BuiltinOutcome::Value(Value::Number(number(a, "a", 0, s)? + number(a, "b", 1, s)?)),
        "multiply" => BuiltinOutcome::Value(Value::Number(number(a, "a", 0, s)? * number(a, "b", 1, s)?)),
        "return" => {
            let mut m = BTreeMap::new();
            for (k, e) in &a.args {
                m.insert(k.clone(), eval_expr(e, s)?);
            }
            BuiltinOutcome::Return(m)
        }
        "throw" => {
            let msg = match a.positional.first().or_else(|| a.arg("message")) {
                Some(e) => match eval_expr(e, s)? {
                    Value::Str(m) => m,
                    other => other.to_canonical_string(),
                },
                None => "thrown".to_string(),
            };
            BuiltinOutcome::Throw(msg)
        }
        "next" | "condition" => BuiltinOutcome::Nothing,
        other => return Err(EvalError::TypeMismatch(alloc::format!(":{other} is not a builtin"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfl::sexpr::expr;
    use crate::value::Path;

    fn binding(callee: &str, args: &str) -> ActionBinding {
        let Expr::Map(m) = expr(args).unwrap() else { panic!() };
        ActionBinding { callee: callee.into(), args: m, positional: Vec::new(), assigns: None, requires: None, ensures: None, condition: None }
    }

    #[test]
    fn arithmetic() {
        let mut s = State::new();
        s.set(&Path::parse("$.a").unwrap(), Value::Number(3.0));
        assert_eq!(apply(&binding("multiply", "{ .a: $.a .b: $.a }"), &s), Ok(BuiltinOutcome::Value(Value::Number(9.0))));
        assert_eq!(apply(&binding("add", "{ .a: $.a .b: 4 }"), &s), Ok(BuiltinOutcome::Value(Value::Number(7.0))));
        assert!(apply(&binding("add", "{ .a: $.a .b: null }"), &s).is_err());
        assert!(matches!(apply(&binding("add", "{ .a: $.zz .b: 1 }"), &s), Err(EvalError::UndefinedVar(_))));
    }

    #[test]
    fn return_collects_entries() {
        let mut s = State::new();
        s.set(&Path::parse("$.sum").unwrap(), Value::Number(25.0));
        let BuiltinOutcome::Return(m) = apply(&binding("return", "{ .sum: $.sum }"), &s).unwrap() else { panic!() };
        assert_eq!(m.get("sum"), Some(&Value::Number(25.0)));
    }
}
