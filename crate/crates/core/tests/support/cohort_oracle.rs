//! Random resource stores and queries, and a longhand evaluator to check
//! cohorts against.

use std::collections::BTreeSet;

use graphflow_core::cohort::{Query, Resource};
use graphflow_core::gfl::Filter;
use graphflow_core::predicate::CmpOp;
use graphflow_core::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TAGS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Invoices with an `amount` field, or none where `xs` has `None`.
pub fn amounts(xs: &[Option<f64>]) -> Vec<Resource> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = Resource::new(format!("i{i}"), "invoice");
            if let Some(x) = x {
                r.fields.insert("amount".into(), Value::Number(*x));
            }
            r
        })
        .collect()
}

pub fn random_store(seed: u64, n: usize) -> Vec<Resource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let ty = if rng.random_bool(0.8) { "contact" } else { "report" };
            let mut r = Resource::new(format!("x{i}"), ty);
            r.ext_type = Some(if rng.random_bool(0.5) { "Patient" } else { "Provider" }.into());
            for t in TAGS {
                if rng.random_bool(0.4) {
                    r.tags.insert(t.into());
                }
            }
            match rng.random_range(0..4) {
                0 => {}
                1 => {
                    r.fields.insert("age".into(), Value::Number(f64::from(rng.random_range(0..100))));
                }
                2 => {
                    r.fields.insert("age".into(), Value::str(format!("{:02}", rng.random_range(0..100))));
                }
                _ => {
                    r.fields.insert("age".into(), Value::Bool(true));
                }
            }
            r
        })
        .collect()
}

pub fn random_query(seed: u64) -> Query {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut filters = Vec::new();
    for _ in 0..rng.random_range(0..5) {
        let tag = TAGS[rng.random_range(0..TAGS.len())].to_string();
        filters.push(match rng.random_range(0..3) {
            0 => Filter::With { tag },
            1 => Filter::Without { tag },
            _ => {
                let op = CmpOp::ALL[rng.random_range(0..6)];
                let value = if rng.random_bool(0.7) { Value::Number(f64::from(rng.random_range(0..100))) } else { Value::str(format!("{:02}", rng.random_range(0..100))) };
                Filter::Field { name: "age".into(), op, value }
            }
        });
    }
    Query {
        slug: "q".into(),
        name: "q".into(),
        resource_type: "contact".into(),
        ext_type: rng.random_bool(0.5).then(|| "Patient".into()),
        filters,
    }
}

/// Set comprehension written out longhand.
pub fn brute_force(q: &Query, rs: &[Resource]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    'next: for r in rs {
        if r.resource_type != q.resource_type {
            continue;
        }
        if let Some(t) = &q.ext_type {
            if r.ext_type.as_deref() != Some(t.as_str()) {
                continue;
            }
        }
        for f in &q.filters {
            let keep = match f {
                Filter::With { tag } => r.tags.iter().any(|t| t == tag),
                Filter::Without { tag } => r.tags.iter().all(|t| t != tag),
                Filter::Field { name, op, value } => {
                    let Some(v) = r.fields.get(name) else { continue 'next };
                    if *op == CmpOp::Eq {
                        v == value
                    } else if *op == CmpOp::Ne {
                        v != value
                    } else {
                        let (x, y) = match (v, value) {
                            (Value::Number(x), Value::Number(y)) => (x.to_string(), y.to_string()),
                            (Value::Str(x), Value::Str(y)) => (x.clone(), y.clone()),
                            _ => continue 'next,
                        };
                        let less = match (v, value) {
                            (Value::Number(a), Value::Number(b)) => a < b,
                            _ => x < y,
                        };
                        let equal = x == y;
                        match op {
                            CmpOp::Lt => less,
                            CmpOp::Lte => less || equal,
                            CmpOp::Gt => !less && !equal,
                            CmpOp::Gte => !less,
                            _ => unreachable!(),
                        }
                    }
                }
            };
            if !keep {
                continue 'next;
            }
        }
        out.insert(r.id.clone());
    }
    out
}
