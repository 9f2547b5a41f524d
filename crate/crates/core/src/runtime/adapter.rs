//! Boundary adapters: the only place a run touches the outside world.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::value::Value;

#[derive(Debug, Clone, Copy)]
pub struct BoundaryCall<'a> {
    pub run_id: &'a str,
    pub node: &'a str,
    pub action: &'a str,
    pub args: &'a Value,
    pub key: &'a str,
    /// 1-based attempt within the idempotency key.
    pub attempt: u32,
}

pub trait BoundaryAdapter: Send {
    fn invoke(&mut self, call: &BoundaryCall<'_>) -> Result<Value, String>;
}

/// Adapters by action keyword, with an optional catch-all.
#[derive(Default)]
pub struct Adapters {
    by_action: BTreeMap<String, Box<dyn BoundaryAdapter>>,
    fallback: Option<Box<dyn BoundaryAdapter>>,
}

impl Adapters {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every action goes to one simulated adapter.
    pub fn simulated(schedule: FaultSchedule) -> Self {
        let mut a = Self::new();
        a.set_fallback(SimAdapter::new(schedule));
        a
    }

    pub fn register(&mut self, action: &str, adapter: impl BoundaryAdapter + 'static) {
        self.by_action.insert(action.to_string(), Box::new(adapter));
    }

    pub fn set_fallback(&mut self, adapter: impl BoundaryAdapter + 'static) {
        self.fallback = Some(Box::new(adapter));
    }

    pub fn invoke(&mut self, call: &BoundaryCall<'_>) -> Result<Value, String> {
        match self.by_action.get_mut(call.action) {
            Some(a) => a.invoke(call),
            None => match &mut self.fallback {
                Some(a) => a.invoke(call),
                None => Err(alloc::format!("no adapter for :{}", call.action)),
            },
        }
    }
}

/// Uniform draw in [0, 1) from a hash of the inputs.
pub fn unit_hash(parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub enum FaultSchedule {
    Never,
    /// One entry per invocation in call order; `true` fails. Past the end, succeed.
    Sequence(Vec<bool>),
    /// Fails when a hash of (seed, key, attempt) falls below `p`.
    Probability { p: f64, seed: u64 },
}

/// A simulated external system. Successful outcomes are remembered per
/// idempotency key, so a repeated key returns the first result without a
/// second effect.
#[derive(Debug, Clone)]
pub struct SimAdapter {
    pub schedule: FaultSchedule,
    pub reason: String,
    /// Every invocation, including deduplicated ones.
    pub calls: u64,
    /// Distinct successful effects.
    pub effects: u64,
    cursor: usize,
    done: BTreeMap<String, Value>,
}

impl SimAdapter {
    pub fn new(schedule: FaultSchedule) -> Self {
        SimAdapter { schedule, reason: "simulated failure".into(), calls: 0, effects: 0, cursor: 0, done: BTreeMap::new() }
    }

    pub fn outcome(call: &BoundaryCall<'_>) -> Value {
        let short = &call.key[..call.key.len().min(12)];
        Value::map([
            ("id", Value::str(alloc::format!("{}-{short}", call.action))),
            ("action", Value::keyword(call.action)),
            ("status", Value::keyword("ok")),
        ])
    }
}

impl BoundaryAdapter for SimAdapter {
    fn invoke(&mut self, call: &BoundaryCall<'_>) -> Result<Value, String> {
        self.calls += 1;
        if let Some(v) = self.done.get(call.key) {
            return Ok(v.clone());
        }
        let fail = match &self.schedule {
            FaultSchedule::Never => false,
            FaultSchedule::Sequence(s) => {
                let f = s.get(self.cursor).copied().unwrap_or(false);
                self.cursor += 1;
                f
            }
            FaultSchedule::Probability { p, seed } => {
                unit_hash(&[&seed.to_le_bytes(), call.key.as_bytes(), &call.attempt.to_le_bytes()]) < *p
            }
        };
        if fail {
            return Err(self.reason.clone());
        }
        let v = Self::outcome(call);
        self.effects += 1;
        self.done.insert(call.key.to_string(), v.clone());
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call<'a>(key: &'a str, args: &'a Value) -> BoundaryCall<'a> {
        BoundaryCall { run_id: "r", node: "1", action: "send-text", args, key, attempt: 1 }
    }

    #[test]
    fn repeated_key_is_one_effect() {
        let args = Value::Null;
        let mut a = SimAdapter::new(FaultSchedule::Never);
        let first = a.invoke(&call("k1", &args)).unwrap();
        let again = a.invoke(&call("k1", &args)).unwrap();
        assert_eq!(first, again);
        assert_eq!((a.calls, a.effects), (2, 1));
    }

    #[test]
    fn sequence_schedule() {
        let args = Value::Null;
        let mut a = SimAdapter::new(FaultSchedule::Sequence(alloc::vec![true, false]));
        assert!(a.invoke(&call("k", &args)).is_err());
        assert!(a.invoke(&call("k", &args)).is_ok());
        assert!(a.invoke(&call("k2", &args)).is_ok());
    }

    #[test]
    fn unit_hash_range() {
        for i in 0u32..200 {
            let u = unit_hash(&[&i.to_le_bytes()]);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
