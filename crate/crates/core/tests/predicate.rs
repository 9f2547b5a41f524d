use graphflow_core::predicate::implies::valid_witness;
use graphflow_core::predicate::{eval, implies, parse_predicate, CmpOp, Implication, NoResources, Predicate, ResourceContext, Term};
use graphflow_core::predicate::eval::{eval_all, EvalError};
use graphflow_core::{Path, State, Value};
use proptest::prelude::*;

fn literal() -> impl Strategy<Value = Value> {
    prop_oneof![
        3 => (-3i32..=3).prop_map(|n| Value::Number(f64::from(n))),
        1 => Just(Value::Number(0.5)),
        1 => Just(Value::Null),
        1 => prop_oneof![Just("s"), Just("t")].prop_map(Value::str),
        1 => any::<bool>().prop_map(Value::Bool),
    ]
}

fn path() -> impl Strategy<Value = Term> {
    prop_oneof![Just("$.x"), Just("$.y"), Just("$.r.z")].prop_map(Term::path)
}

fn op() -> impl Strategy<Value = CmpOp> {
    (0..6usize).prop_map(|i| CmpOp::ALL[i])
}

fn atom() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        4 => (op(), path(), literal()).prop_map(|(o, p, l)| Predicate::cmp(o, p, Term::Lit(l))),
        1 => (op(), literal(), path()).prop_map(|(o, l, p)| Predicate::cmp(o, Term::Lit(l), p)),
        1 => (op(), path(), path()).prop_map(|(o, a, b)| Predicate::cmp(o, a, b)),
    ]
}

fn predicate() -> impl Strategy<Value = Predicate> {
    let leaf = prop_oneof![
        4 => atom(),
        1 => (path(), prop_oneof![Just("vip"), Just("done")]).prop_map(|(r, t)| Predicate::WithTag { resource: r, tag: t.into() }),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Predicate::And),
            prop::collection::vec(inner.clone(), 1..4).prop_map(Predicate::Or),
            inner.prop_map(|p| Predicate::Not(Box::new(p))),
        ]
    })
}

/// Resources are tagged `vip` when their id starts with `v`.
struct Tags;

impl ResourceContext for Tags {
    fn has_tag(&self, r: &Value, tag: &str) -> Result<bool, EvalError> {
        match r {
            Value::Str(id) => Ok(tag == "vip" && id.starts_with('v')),
            other => Err(EvalError::UnknownResource(other.to_canonical_string())),
        }
    }
}

/// Every assignment of grid values (or absence) to x, y and r.z.
fn states() -> Vec<State> {
    let mut grid: Vec<Option<Value>> = vec![None, Some(Value::Null), Some(Value::str("s")), Some(Value::str("v1")), Some(Value::Bool(true))];
    grid.extend([-4.0, -3.0, -2.5, -1.0, 0.0, 0.5, 1.0, 2.0, 3.0, 3.5].map(|n| Some(Value::Number(n))));
    let mut out = Vec::new();
    for x in &grid {
        for y in &grid {
            for z in [None, Some(Value::Number(0.0)), Some(Value::Number(3.0)), Some(Value::Null)] {
                let mut s = State::new();
                for (p, v) in [("$.x", x), ("$.y", y), ("$.r.z", &z)] {
                    if let Some(v) = v {
                        s.set(&Path::parse(p).unwrap(), v.clone());
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn text_round_trip(p in predicate()) {
        let text = p.to_string();
        prop_assert_eq!(parse_predicate(&text), Ok(p), "{}", text);
    }

    #[test]
    fn conjunction_and_disjunction_commute(ps in prop::collection::vec(predicate(), 1..5), seed in any::<u64>()) {
        let mut rev = ps.clone();
        rev.reverse();
        let k = (seed as usize) % ps.len();
        rev.rotate_left(k);
        for s in states().iter().step_by(7) {
            prop_assert_eq!(eval(&Predicate::And(ps.clone()), s, &Tags), eval(&Predicate::And(rev.clone()), s, &Tags));
            prop_assert_eq!(eval(&Predicate::Or(ps.clone()), s, &Tags), eval(&Predicate::Or(rev.clone()), s, &Tags));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 3000, failure_persistence: None, ..ProptestConfig::default() })]

    /// Proven never has a concrete counterexample; Refuted carries one.
    #[test]
    fn implication_is_sound(ante in prop::collection::vec(atom(), 0..4), cons in prop::collection::vec(atom(), 1..3)) {
        let cons = Predicate::and(cons);
        match implies(&ante, &cons) {
            Implication::Proven => {
                for s in states() {
                    if eval_all(&ante, &s, &NoResources) == Ok(true) {
                        prop_assert_eq!(eval(&cons, &s, &NoResources), Ok(true), "state {}", s.canonical());
                    }
                }
            }
            Implication::Refuted(w) => prop_assert!(valid_witness(&ante, &cons, &w), "witness {}", w.canonical()),
            Implication::Unknown => {}
        }
    }
}

#[test]
fn decides_the_common_cases() {
    let p = |s: &str| parse_predicate(s).unwrap();
    let proven = |a: &[&str], c: &str| implies(&a.iter().map(|s| p(s)).collect::<Vec<_>>(), &p(c)).is_proven();
    assert!(proven(&["(:gte $.x 0)", "(:gte $.y 0)"], "(:gte $.x -1)"));
    assert!(proven(&["(:gt $.x 2)"], "(:ne $.x null)"));
    assert!(proven(&["(:eq $.x 1)", "(:eq $.x 2)"], "(:eq $.y 7)"), "contradictory antecedent");
    assert!(matches!(implies(&[p("(:gte $.x 0)")], &p("(:gt $.x 0)")), Implication::Refuted(_)));
}
