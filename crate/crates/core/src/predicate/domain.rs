//! Per-path nullability, numeric range and exact-value facts.
//!
//! A conjunction of predicates folds into one [`AbstractState`]. Every state
//! that satisfies the conjunction satisfies the folded facts; atoms the
//! domain cannot express are kept verbatim in `opaque`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use super::{eval, CmpOp, NoResources, Predicate, Term};
use crate::value::{format_number, Path, State, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nullability {
    /// Unbound or bound to null.
    Null,
    /// Bound to a non-null value.
    NonNull,
    Unknown,
}

/// A real interval. Infinite endpoints are always open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumRange {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl NumRange {
    pub const FULL: NumRange = NumRange { lo: f64::NEG_INFINITY, lo_closed: false, hi: f64::INFINITY, hi_closed: false };

    pub fn point(x: f64) -> Self {
        NumRange { lo: x, lo_closed: true, hi: x, hi_closed: true }
    }

    pub fn new(lo: f64, lo_closed: bool, hi: f64, hi_closed: bool) -> Self {
        NumRange { lo, lo_closed: lo_closed && lo.is_finite(), hi, hi_closed: hi_closed && hi.is_finite() }
    }

    /// The set `{x : x op n}`.
    pub fn from_op(op: CmpOp, n: f64) -> Option<Self> {
        Some(match op {
            CmpOp::Eq => NumRange::point(n),
            CmpOp::Lt => NumRange::new(f64::NEG_INFINITY, false, n, false),
            CmpOp::Lte => NumRange::new(f64::NEG_INFINITY, false, n, true),
            CmpOp::Gt => NumRange::new(n, false, f64::INFINITY, false),
            CmpOp::Gte => NumRange::new(n, true, f64::INFINITY, false),
            CmpOp::Ne => return None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        x.is_finite() && above && below
    }

    pub fn intersect(&self, o: &NumRange) -> NumRange {
        let (lo, lo_closed) = if self.lo > o.lo {
            (self.lo, self.lo_closed)
        } else if o.lo > self.lo {
            (o.lo, o.lo_closed)
        } else {
            (self.lo, self.lo_closed && o.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < o.hi {
            (self.hi, self.hi_closed)
        } else if o.hi < self.hi {
            (o.hi, o.hi_closed)
        } else {
            (self.hi, self.hi_closed && o.hi_closed)
        };
        NumRange { lo, lo_closed, hi, hi_closed }
    }

    /// Whether every real in `self` lies in `o`.
    pub fn subset_of(&self, o: &NumRange) -> bool {
        if self.is_empty() {
            return true;
        }
        let lo_ok = self.lo > o.lo || (self.lo == o.lo && (o.lo_closed || !self.lo_closed));
        let hi_ok = self.hi < o.hi || (self.hi == o.hi && (o.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }

    /// Some finite member, preferring 0, then closed endpoints.
    pub fn representative(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let candidates = [
            0.0,
            self.lo,
            self.hi,
            self.lo + 1.0,
            self.hi - 1.0,
            self.lo / 2.0 + self.hi / 2.0,
            self.lo * 2.0,
            self.hi * 2.0,
        ];
        candidates.into_iter().find(|x| self.contains(*x))
    }

    pub fn sum(&self, o: &NumRange) -> NumRange {
        NumRange::new(self.lo + o.lo, self.lo_closed && o.lo_closed, self.hi + o.hi, self.hi_closed && o.hi_closed)
    }

    /// Closed hull of the four endpoint products. Treating open finite
    /// bounds as closed only widens the result.
    pub fn product(&self, o: &NumRange) -> NumRange {
        let ps = [mul_ext(self.lo, o.lo), mul_ext(self.lo, o.hi), mul_ext(self.hi, o.lo), mul_ext(self.hi, o.hi)];
        let lo = ps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        NumRange::new(lo, true, hi, true)
    }

    /// Range of `x * x` for `x` in self.
    pub fn square(&self) -> NumRange {
        let p = self.product(self);
        let lo_bound = NumRange::new(0.0, true, f64::INFINITY, false);
        if self.contains(0.0) {
            NumRange::new(0.0, true, p.hi, true).intersect(&lo_bound)
        } else {
            p.intersect(&lo_bound)
        }
    }
}

/// Extended multiplication where 0 * inf = 0 (a zero endpoint dominates).
fn mul_ext(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl fmt::Display for NumRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let end = |x: f64| {
            if x == f64::INFINITY {
                alloc::string::String::from("inf")
            } else if x == f64::NEG_INFINITY {
                alloc::string::String::from("-inf")
            } else {
                format_number(x)
            }
        };
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            end(self.lo),
            end(self.hi),
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFact {
    pub null: Nullability,
    /// `Some` when the path is known to hold a number in this range.
    pub num: Option<NumRange>,
    /// A known non-numeric, non-null value.
    pub exact: Option<Value>,
}

impl Default for PathFact {
    fn default() -> Self {
        PathFact { null: Nullability::Unknown, num: None, exact: None }
    }
}

impl PathFact {
    fn consistent(&self) -> bool {
        if self.num.is_some_and(|r| r.is_empty()) {
            return false;
        }
        if self.num.is_some() && self.exact.is_some() {
            return false;
        }
        if self.null == Nullability::Null && (self.num.is_some() || self.exact.is_some()) {
            return false;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("constraints on {0} are unsatisfiable")]
pub struct Contradiction(pub Path);

/// Constraints on literal operands only; carried under a synthetic path.
fn literal_path() -> Path {
    Path::parse("$.<literal>").expect("valid")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AbstractState {
    pub facts: BTreeMap<Path, PathFact>,
    pub opaque: Vec<Predicate>,
}

/// Normalizes an atom to `(path op literal)` when possible.
pub(crate) fn path_literal(op: CmpOp, lhs: &Term, rhs: &Term) -> Option<(Path, CmpOp, Value)> {
    match (lhs, rhs) {
        (Term::Path(p), Term::Lit(v)) => Some((p.clone(), op, v.clone())),
        (Term::Lit(v), Term::Path(p)) => Some((p.clone(), op.flip(), v.clone())),
        _ => None,
    }
}

impl AbstractState {
    pub fn fact(&self, p: &Path) -> PathFact {
        self.facts.get(p).cloned().unwrap_or_default()
    }

    /// Applies `f` to the fact for `p`; `f` returns false on conflict.
    fn update(&mut self, p: &Path, f: impl FnOnce(&mut PathFact) -> bool) -> Result<(), Contradiction> {
        let fact = self.facts.entry(p.clone()).or_default();
        if f(fact) && fact.consistent() {
            Ok(())
        } else {
            Err(Contradiction(p.clone()))
        }
    }

    /// Adds one predicate (conjunctively).
    pub fn assume(&mut self, pred: &Predicate) -> Result<(), Contradiction> {
        for atom in pred.conjuncts() {
            self.assume_atom(atom)?;
        }
        Ok(())
    }

    fn assume_atom(&mut self, atom: &Predicate) -> Result<(), Contradiction> {
        let Predicate::Compare { op, lhs, rhs } = atom else {
            self.opaque.push(atom.clone());
            return Ok(());
        };
        if let (Term::Lit(_), Term::Lit(_)) = (lhs, rhs) {
            return match eval(atom, &State::new(), &NoResources) {
                Ok(true) => Ok(()),
                _ => Err(Contradiction(literal_path())),
            };
        }
        let Some((path, op, lit)) = path_literal(*op, lhs, rhs) else {
            self.opaque.push(atom.clone());
            return Ok(());
        };
        match (op, &lit) {
            (CmpOp::Ne, Value::Null) => self.update(&path, |f| {
                let ok = f.null != Nullability::Null;
                f.null = Nullability::NonNull;
                ok
            }),
            (CmpOp::Eq, Value::Null) => self.update(&path, |f| {
                let ok = f.null != Nullability::NonNull;
                f.null = Nullability::Null;
                ok
            }),
            (CmpOp::Ne, _) => {
                self.opaque.push(atom.clone());
                Ok(())
            }
            (_, Value::Number(n)) => {
                let r = NumRange::from_op(op, *n).expect("not ne");
                self.update(&path, |f| {
                    let ok = f.null != Nullability::Null;
                    f.null = Nullability::NonNull;
                    f.num = Some(f.num.unwrap_or(NumRange::FULL).intersect(&r));
                    ok
                })
            }
            (CmpOp::Eq, v) => {
                let v = v.clone();
                self.update(&path, |f| {
                    let ok = f.null != Nullability::Null && f.exact.as_ref().is_none_or(|e| *e == v);
                    f.null = Nullability::NonNull;
                    f.exact = Some(v);
                    ok
                })
            }
            // An ordering against a non-number always errors, so it never holds.
            _ => Err(Contradiction(path)),
        }
    }
}

/// Folds a conjunction of predicates into an abstract state.
pub fn abstract_state(ps: &[Predicate]) -> Result<AbstractState, Contradiction> {
    let mut s = AbstractState::default();
    for p in ps {
        s.assume(p)?;
    }
    Ok(s)
}
