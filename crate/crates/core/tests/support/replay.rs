//! Randomized executions, crash-restart at event prefixes, and replay
//! comparison for a diagram.

use std::collections::BTreeMap;
use std::sync::Arc;

use graphflow_core::diagram::{self, Diagram};
use graphflow_core::runtime::{self, Adapters, BasicEffects, EngineError, FaultSchedule, ListenerKind, RunStatus, RunView, Signal, StartRequest};
use graphflow_core::store::{EventKind, EventRecord, EventStore, MemoryStore, NewEvent};
use graphflow_core::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WS: &str = "w";
const RUN: &str = "r";

#[derive(Debug, Default)]
pub struct Campaign {
    pub executions: usize,
    pub crash_restarts: usize,
    pub events: usize,
    pub longest: usize,
    pub statuses: BTreeMap<&'static str, usize>,
    pub failures: Vec<String>,
}

impl Campaign {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn contact(id: &str, ext: &str) -> Value {
    Value::map([("id", Value::str(id)), ("ext-id", Value::str(ext)), ("ext-type", Value::str("Patient"))])
}

fn request(d: &Diagram, rng: &mut ChaCha8Rng) -> StartRequest {
    let mut req = StartRequest::default();
    for (name, _) in &d.inputs {
        let v = if rng.random_bool(0.5) { f64::from(rng.random_range(-40..=40)) } else { rng.random_range(-40.0..40.0) };
        req.inputs.insert(name.clone(), Value::Number(v));
    }
    for lane in &d.lanes {
        req.bindings.insert(lane.key.clone(), contact(&format!("{}-1", lane.key), &format!("ext-{}", lane.key)));
    }
    req
}

fn effects(p: f64, seed: u64) -> BasicEffects {
    let schedule = if p == 0.0 { FaultSchedule::Never } else { FaultSchedule::Probability { p, seed } };
    BasicEffects::new(Adapters::simulated(schedule))
}

/// Signals to try next, in order; some are noise the run records or refuses.
fn next_signals(status: &RunStatus, fx: &mut BasicEffects, rng: &mut ChaCha8Rng, round: usize) -> Vec<Signal> {
    let Some(l) = status.listener() else { return Vec::new() };
    let mut out = Vec::new();
    match &l.kind {
        ListenerKind::Tag { resource, with, .. } => {
            if rng.random_bool(0.3) {
                out.push(Signal::TagAdded { resource: "someone-else".into(), tag: with.first().cloned().unwrap_or_default(), tags: with.clone() });
            }
            if rng.random_bool(0.5) {
                let noise = format!("noise-{}", rng.random_range(0..3));
                fx.tag(resource, &noise);
                out.push(Signal::TagAdded { resource: resource.clone(), tag: noise, tags: fx.tags_of(resource) });
            }
            // The decision after each wait reads a `-positive` tag.
            for t in with {
                if rng.random_bool(0.5) {
                    fx.tag(resource, &t.replace("-completed", "-positive"));
                }
            }
            for t in with {
                fx.tag(resource, t);
                out.push(Signal::TagAdded { resource: resource.clone(), tag: t.clone(), tags: fx.tags_of(resource) });
            }
        }
        ListenerKind::Timer { .. } => out.push(Signal::TimerFired { listener_id: l.id.clone() }),
        kind => {
            let choices = kind.choices();
            if rng.random_bool(0.2) {
                out.push(Signal::HumanDecision { node_id: "nowhere".into(), choice: choices[0].into(), actor: "ops".into() });
            }
            // Loops end: later rounds favour the first choice.
            let pick = if round > 2 || rng.random_bool(0.6) { 0 } else { rng.random_range(0..choices.len()) };
            out.push(Signal::HumanDecision { node_id: l.node.clone(), choice: choices[pick].into(), actor: "ops".into() });
        }
    }
    out
}

fn same(a: &RunView, b: &RunView) -> Result<(), String> {
    if a.trace != b.trace {
        return Err(format!("transitions differ: {:?} vs {:?}", a.trace, b.trace));
    }
    if a.status != b.status {
        return Err(format!("status differs: {:?} vs {:?}", a.status, b.status));
    }
    if a.sigma != b.sigma {
        return Err(format!("sigma differs: {} vs {}", a.sigma.canonical(), b.sigma.canonical()));
    }
    Ok(())
}

fn truncated(records: &[EventRecord]) -> MemoryStore {
    let mut s = MemoryStore::new();
    s.create_workspace(WS).unwrap();
    for r in records {
        let ev = NewEvent { at: r.at.clone(), node_id: r.node_id.clone(), kind: r.kind, payload: r.payload.clone(), idempotency_key: r.idempotency_key.clone() };
        s.append(WS, RUN, ev).unwrap();
    }
    s
}

fn replay_matches(store: &MemoryStore, lib: &BTreeMap<String, Arc<Diagram>>, live: &RunView) -> Result<(), String> {
    let r = runtime::replay(store, WS, RUN, lib).map_err(|e| format!("replay failed: {e}"))?;
    if r.incomplete {
        return Err("replay of a settled run is incomplete".into());
    }
    if r.view.adapter_calls != 0 {
        return Err(format!("replay made {} adapter calls", r.view.adapter_calls));
    }
    same(&r.view, live)
}

/// One execution: live run with random faults and signals, then replay and
/// crash-restart checks. Returns the number of restarts exercised.
fn execution(d: &Arc<Diagram>, lib: &BTreeMap<String, Arc<Diagram>>, seed: u64, c: &mut Campaign) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = [0.0, 0.1, 0.3][rng.random_range(0..3)];
    let fault_seed = rng.random();
    let req = request(d, &mut rng);
    let mut store = MemoryStore::new();
    store.create_workspace(WS).unwrap();
    let mut fx = effects(p, fault_seed);
    let mut live = match runtime::start_run(&mut store, WS, RUN, d, lib, &req, &mut fx) {
        Ok(v) => v,
        Err(e) => return Err(format!("start failed: {e}")),
    };
    let mut accepted = Vec::new();
    let mut round = 0;
    while !live.status.is_terminal() && round < 12 {
        if rng.random_bool(0.2) {
            runtime::checkpoint(&mut store, WS, RUN, lib, fx.clock.rfc3339()).map_err(|e| format!("checkpoint: {e}"))?;
        }
        for s in next_signals(&live.status, &mut fx, &mut rng, round) {
            match runtime::deliver(&mut store, WS, RUN, lib, &s, &mut fx) {
                Ok(v) => {
                    accepted.push(s);
                    live = v;
                }
                Err(EngineError::SignalMismatch(_) | EngineError::StaleSignal(_)) => {}
                Err(e) => return Err(format!("deliver failed: {e}")),
            }
        }
        round += 1;
    }
    if !live.status.is_terminal() {
        return Err(format!("run did not settle: {:?}", live.status));
    }
    *c.statuses.entry(live.status.name()).or_default() += 1;
    replay_matches(&store, lib, &live)?;

    let records = store.read(WS, RUN, 1).unwrap();
    c.events += records.len();
    c.longest = c.longest.max(records.len());
    let cuts: Vec<usize> = if records.len() <= 20 {
        (1..records.len()).collect()
    } else {
        let mut v: Vec<usize> = (0..20).map(|_| rng.random_range(1..records.len())).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    for &k in &cuts {
        let mut s = truncated(&records[..k]);
        let mut fx2 = effects(p, fault_seed);
        fx2.tags = fx.tags.clone();
        let consumed = records[..k].iter().filter(|r| matches!(r.kind, EventKind::SignalReceived | EventKind::TimerFired)).count();
        let mut v = runtime::resume(&mut s, WS, RUN, lib, &mut fx2).map_err(|e| format!("restart at {k}: {e}"))?;
        for sig in &accepted[consumed..] {
            v = runtime::deliver(&mut s, WS, RUN, lib, sig, &mut fx2).map_err(|e| format!("restart at {k}, redelivery: {e}"))?;
        }
        same(&v, &live).map_err(|e| format!("restart at {k}: {e}"))?;
        replay_matches(&s, lib, &live).map_err(|e| format!("restart at {k}: {e}"))?;
    }
    Ok(cuts.len())
}

pub fn campaign(src: &str, executions: u64, seed: u64) -> Campaign {
    let d = Arc::new(diagram::from_source(src, None).unwrap());
    let lib = BTreeMap::from([(d.slug.clone(), d.clone())]);
    let mut c = Campaign::default();
    for i in 0..executions {
        let s = seed.wrapping_add(i);
        c.executions += 1;
        match execution(&d, &lib, s, &mut c) {
            Ok(n) => c.crash_restarts += n,
            Err(e) => c.failures.push(format!("{} seed {s}: {e}", d.slug)),
        }
    }
    c
}
