//! Contract predicates over workflow state.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::gfl::Expr;
use crate::value::{Path, Value};

pub mod domain;
pub mod eval;
pub mod implies;

pub use domain::{abstract_state, AbstractState, Contradiction, NumRange, Nullability, PathFact};
pub use eval::{eval, EvalError, NoResources, ResourceContext};
pub use implies::{implies, Implication};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Lte,
    Gt,
    Gte,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Lte, CmpOp::Gt, CmpOp::Gte];

    pub fn name(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Lt => "lt",
            CmpOp::Lte => "lte",
            CmpOp::Gt => "gt",
            CmpOp::Gte => "gte",
        }
    }

    pub fn from_name(s: &str) -> Option<CmpOp> {
        CmpOp::ALL.into_iter().find(|o| o.name() == s)
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Gte,
            CmpOp::Lte => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Lte,
            CmpOp::Gte => CmpOp::Lt,
        }
    }

    /// The operator with its operands swapped: `a < b` iff `b > a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Lte => CmpOp::Gte,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Gte => CmpOp::Lte,
            o => o,
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    pub fn apply_f64(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Lte => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Gte => a >= b,
        }
    }

    pub fn apply_ord(self, o: core::cmp::Ordering) -> bool {
        use core::cmp::Ordering::*;
        match self {
            CmpOp::Eq => o == Equal,
            CmpOp::Ne => o != Equal,
            CmpOp::Lt => o == Less,
            CmpOp::Lte => o != Greater,
            CmpOp::Gt => o == Greater,
            CmpOp::Gte => o != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Path(Path),
    /// Null, bool, number, string or keyword.
    Lit(Value),
}

impl Term {
    pub fn path(s: &str) -> Term {
        Term::Path(Path::parse(s).expect("valid path literal"))
    }

    pub fn num(n: f64) -> Term {
        Term::Lit(Value::Number(n))
    }

    pub fn as_path(&self) -> Option<&Path> {
        match self {
            Term::Path(p) => Some(p),
            Term::Lit(_) => None,
        }
    }

    pub fn from_expr(e: &Expr) -> Option<Term> {
        Some(match e {
            Expr::Path(p) => Term::Path(p.clone()),
            Expr::Null => Term::Lit(Value::Null),
            Expr::Bool(b) => Term::Lit(Value::Bool(*b)),
            Expr::Number(n) => Term::Lit(Value::Number(*n)),
            Expr::Str(s) => Term::Lit(Value::Str(s.clone())),
            Expr::Keyword(k) => Term::Lit(Value::Keyword(k.clone())),
            _ => return None,
        })
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            Term::Path(p) => Expr::Path(p.clone()),
            Term::Lit(v) => Expr::from_literal(v),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Path(p) => write!(f, "{p}"),
            Term::Lit(Value::Number(n)) if n.is_infinite() => f.write_str(if *n > 0.0 { "inf" } else { "-inf" }),
            Term::Lit(v) => write!(f, "{}", Expr::from_literal(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Compare { op: CmpOp, lhs: Term, rhs: Term },
    And(Vec<Predicate>),
    /// Reserved; the implication checker never decides it.
    Or(Vec<Predicate>),
    /// Reserved; the implication checker never decides it.
    Not(Box<Predicate>),
    WithTag { resource: Term, tag: String },
}

impl Predicate {
    pub fn cmp(op: CmpOp, lhs: Term, rhs: Term) -> Self {
        Predicate::Compare { op, lhs, rhs }
    }

    pub fn and(mut ps: Vec<Predicate>) -> Self {
        if ps.len() == 1 {
            ps.pop().expect("len 1")
        } else {
            Predicate::And(ps)
        }
    }

    pub fn from_expr(e: &Expr) -> Result<Predicate, String> {
        let Expr::Call { head, args } = e else {
            return Err(alloc::format!("expected a predicate s-expression, found {e}"));
        };
        if let Some(op) = CmpOp::from_name(head) {
            if args.len() != 2 {
                return Err(alloc::format!(":{head} takes two terms"));
            }
            let lhs = Term::from_expr(&args[0]).ok_or_else(|| alloc::format!("bad term {}", args[0]))?;
            let rhs = Term::from_expr(&args[1]).ok_or_else(|| alloc::format!("bad term {}", args[1]))?;
            return Ok(Predicate::Compare { op, lhs, rhs });
        }
        match head.as_str() {
            "and" | "or" => {
                if args.is_empty() {
                    return Err(alloc::format!(":{head} needs at least one operand"));
                }
                let ps = args.iter().map(Predicate::from_expr).collect::<Result<Vec<_>, _>>()?;
                Ok(if head == "and" { Predicate::And(ps) } else { Predicate::Or(ps) })
            }
            "not" => {
                if args.len() != 1 {
                    return Err(":not takes one operand".into());
                }
                Ok(Predicate::Not(Box::new(Predicate::from_expr(&args[0])?)))
            }
            "with-tag" => {
                if args.len() != 2 {
                    return Err(":with-tag takes a resource and a tag".into());
                }
                let resource = Term::from_expr(&args[0]).ok_or_else(|| alloc::format!("bad term {}", args[0]))?;
                let tag = args[1].as_keyword().ok_or_else(|| "tag must be a keyword".to_string())?.to_string();
                Ok(Predicate::WithTag { resource, tag })
            }
            other => Err(alloc::format!("unknown predicate :{other}")),
        }
    }

    pub fn to_expr(&self) -> Expr {
        let call = |head: &str, args: Vec<Expr>| Expr::Call { head: head.into(), args };
        match self {
            Predicate::Compare { op, lhs, rhs } => call(op.name(), vec![lhs.to_expr(), rhs.to_expr()]),
            Predicate::And(ps) => call("and", ps.iter().map(Predicate::to_expr).collect()),
            Predicate::Or(ps) => call("or", ps.iter().map(Predicate::to_expr).collect()),
            Predicate::Not(p) => call("not", vec![p.to_expr()]),
            Predicate::WithTag { resource, tag } => call("with-tag", vec![resource.to_expr(), Expr::Keyword(tag.clone())]),
        }
    }

    /// Flattens nested conjunctions into their atoms.
    pub fn conjuncts(&self) -> Vec<&Predicate> {
        match self {
            Predicate::And(ps) => ps.iter().flat_map(|p| p.conjuncts()).collect(),
            p => vec![p],
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths<'a>(&'a self, out: &mut Vec<&'a Path>) {
        match self {
            Predicate::Compare { lhs, rhs, .. } => {
                out.extend(lhs.as_path());
                out.extend(rhs.as_path());
            }
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.collect_paths(out)),
            Predicate::Not(p) => p.collect_paths(out),
            Predicate::WithTag { resource, .. } => out.extend(resource.as_path()),
        }
    }

    /// Rewrites every path through `f`; paths mapped to `None` are kept.
    pub fn map_paths(&self, f: &impl Fn(&Path) -> Option<Path>) -> Predicate {
        let t = |t: &Term| match t {
            Term::Path(p) => Term::Path(f(p).unwrap_or_else(|| p.clone())),
            l => l.clone(),
        };
        match self {
            Predicate::Compare { op, lhs, rhs } => Predicate::Compare { op: *op, lhs: t(lhs), rhs: t(rhs) },
            Predicate::And(ps) => Predicate::And(ps.iter().map(|p| p.map_paths(f)).collect()),
            Predicate::Or(ps) => Predicate::Or(ps.iter().map(|p| p.map_paths(f)).collect()),
            Predicate::Not(p) => Predicate::Not(Box::new(p.map_paths(f))),
            Predicate::WithTag { resource, tag } => Predicate::WithTag { resource: t(resource), tag: tag.clone() },
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Compare { op, lhs, rhs } => write!(f, "(:{} {lhs} {rhs})", op.name()),
            Predicate::And(ps) | Predicate::Or(ps) => {
                f.write_str(if matches!(self, Predicate::And(_)) { "(:and" } else { "(:or" })?;
                for p in ps {
                    write!(f, " {p}")?;
                }
                f.write_str(")")
            }
            Predicate::Not(p) => write!(f, "(:not {p})"),
            Predicate::WithTag { resource, tag } => write!(f, "(:with-tag {resource} :{tag})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClaimKind {
    IsDeterministic,
    IsTotal,
    IsCommutative,
    AssumedBoundary,
}

impl ClaimKind {
    pub fn name(self) -> &'static str {
        match self {
            ClaimKind::IsDeterministic => "is-deterministic",
            ClaimKind::IsTotal => "is-total",
            ClaimKind::IsCommutative => "is-commutative",
            ClaimKind::AssumedBoundary => "assumed-boundary",
        }
    }

    pub fn from_name(s: &str) -> Option<ClaimKind> {
        [ClaimKind::IsDeterministic, ClaimKind::IsTotal, ClaimKind::IsCommutative, ClaimKind::AssumedBoundary]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// A property claim from a `properties:` list. Never evaluated against state.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyClaim {
    pub kind: ClaimKind,
    pub args: Vec<Term>,
}

impl PropertyClaim {
    pub fn from_expr(e: &Expr) -> Result<PropertyClaim, String> {
        let Expr::Call { head, args } = e else {
            return Err(alloc::format!("expected a property claim, found {e}"));
        };
        let kind = ClaimKind::from_name(head).ok_or_else(|| alloc::format!("unknown property :{head}"))?;
        let args = args
            .iter()
            .map(|a| Term::from_expr(a).ok_or_else(|| alloc::format!("bad claim argument {a}")))
            .collect::<Result<Vec<_>, _>>()?;
        if kind == ClaimKind::IsCommutative && args.len() != 2 {
            return Err(":is-commutative takes two paths".into());
        }
        if kind == ClaimKind::IsCommutative && args.iter().any(|a| a.as_path().is_none()) {
            return Err(":is-commutative takes two paths".into());
        }
        Ok(PropertyClaim { kind, args })
    }

    pub fn to_expr(&self) -> Expr {
        Expr::Call { head: self.kind.name().into(), args: self.args.iter().map(Term::to_expr).collect() }
    }
}

impl fmt::Display for PropertyClaim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(:{}", self.kind.name())?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// Predicates and claims serialize as their s-expression text.
impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let t = String::deserialize(d)?;
        parse_predicate(&t).map_err(serde::de::Error::custom)
    }
}

impl Serialize for PropertyClaim {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PropertyClaim {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let t = String::deserialize(d)?;
        let e = crate::gfl::sexpr::expr(&t).map_err(serde::de::Error::custom)?;
        PropertyClaim::from_expr(&e).map_err(serde::de::Error::custom)
    }
}

/// Parses predicate text such as `(:gte $.x 0)`; for tests and tooling.
pub fn parse_predicate(text: &str) -> Result<Predicate, String> {
    let e = crate::gfl::sexpr::expr(text).map_err(|e| e.to_string())?;
    Predicate::from_expr(&e)
}
