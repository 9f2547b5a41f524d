//! Clinic pilot simulation on the cognitive testing pathway.
//!
//! Patients go through the same path a deployment would: seeded as contact
//! resources, enrolled by the pathway's trigger on a daily tick, executed by
//! the runtime against simulated boundary adapters, and moved through the
//! downstream waits by a scripted signaler. The report is then rebuilt from
//! the event logs alone.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Duration, Months};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::Resource;
use crate::diagram::Diagram;
use crate::gfl::Declaration;
use crate::runtime::adapter::unit_hash;
use crate::runtime::{Adapters, BoundaryAdapter, BoundaryCall, FaultSchedule, ListenerKind, SimAdapter, Signal, VirtualClock};
use crate::store::{EventKind, EventStore, MemoryStore, StoreError};
use crate::value::Value;
use crate::workspace::{Workspace, WorkspaceError};

pub const GATE_ACTION: &str = "create-lab-order";
pub const AUTHORIZATION: &str = "authorization-failure";
pub const DATA_INTEGRITY: &str = "data-integrity-failure";
pub const ACTOR: &str = "pilot-script";

const SCREENING_DONE: &str = "cognitive-screening-completed";
const SCREENING_POSITIVE: &str = "cognitive-screening-positive";
const ASSESSMENT_DONE: &str = "cognitive-assessment-completed";
const ASSESSMENT_POSITIVE: &str = "cognitive-assessment-positive";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PilotError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn default_months() -> u32 {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ClinicProfile {
    pub name: String,
    pub enrolled: usize,
    /// Exact number of gate failures (quota mode).
    #[serde(default)]
    pub failures: Option<usize>,
    /// Per-patient gate failure probability (probability mode).
    #[serde(default)]
    pub failure_probability: Option<f64>,
    #[serde(default = "default_months")]
    pub active_months: u32,
    /// Share of failures attributed to data integrity rather than authorization.
    #[serde(default)]
    pub data_integrity_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PilotConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_screening")]
    pub screening_positive_rate: f64,
    #[serde(default = "default_assessment")]
    pub assessment_positive_rate: f64,
    #[serde(default = "default_providers")]
    pub providers_per_clinic: usize,
    pub clinics: Vec<ClinicProfile>,
}

fn default_screening() -> f64 {
    0.2
}

fn default_assessment() -> f64 {
    0.5
}

fn default_providers() -> usize {
    4
}

impl PilotConfig {
    pub fn new(clinics: Vec<ClinicProfile>) -> Self {
        PilotConfig {
            seed: 0,
            screening_positive_rate: default_screening(),
            assessment_positive_rate: default_assessment(),
            providers_per_clinic: default_providers(),
            clinics,
        }
    }

    pub fn validate(&self) -> Result<(), PilotError> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if !rate(self.screening_positive_rate) || !rate(self.assessment_positive_rate) {
            return Err(PilotError::Config("positive rates must be within [0, 1]".into()));
        }
        if self.providers_per_clinic == 0 {
            return Err(PilotError::Config("at least one provider per clinic".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.clinics {
            if !names.insert(&c.name) || c.name.is_empty() {
                return Err(PilotError::Config(format!("clinic name {:?} is empty or repeated", c.name)));
            }
            match (c.failures, c.failure_probability) {
                (Some(k), None) if k > c.enrolled => {
                    return Err(PilotError::Config(format!("{}: quota {k} exceeds enrollment {}", c.name, c.enrolled)));
                }
                (Some(_), None) => {}
                (None, Some(p)) if rate(p) => {}
                (None, Some(p)) => return Err(PilotError::Config(format!("{}: probability {p} out of range", c.name))),
                _ => return Err(PilotError::Config(format!("{}: give exactly one of failures or failure-probability", c.name))),
            }
            if c.active_months == 0 || !rate(c.data_integrity_share) {
                return Err(PilotError::Config(format!("{}: active-months must be positive and the share within [0, 1]", c.name)));
            }
        }
        Ok(())
    }
}

/// The boundary at which the pilot counts success: the first lab order.
pub fn gate_node(d: &Diagram) -> Option<&str> {
    let order = crate::diagram::topological_order(d).ok()?;
    order.into_iter().find(|id| d.node(id).and_then(|n| n.callee()) == Some(GATE_ACTION)).and_then(|id| d.node(&id).map(|n| n.id.as_str()))
}

/// Fails the gate for a fixed set of patients, every attempt; an
/// authorization refusal does not clear on retry.
struct GateAdapter {
    gate: String,
    failing: BTreeMap<String, &'static str>,
}

impl BoundaryAdapter for GateAdapter {
    fn invoke(&mut self, call: &BoundaryCall<'_>) -> Result<Value, String> {
        if call.node == self.gate {
            let patient = call.args.get("patientId").and_then(Value::as_str).unwrap_or("");
            if let Some(reason) = self.failing.get(patient) {
                return Err((*reason).to_string());
            }
        }
        Ok(SimAdapter::outcome(call))
    }
}

fn patient_ext(clinic: &str, i: usize) -> String {
    format!("{clinic}-mrn-{i:05}")
}

/// Which patients fail the gate and why, per the clinic's mode.
fn failing_set(cfg: &PilotConfig, c: &ClinicProfile) -> BTreeMap<String, &'static str> {
    let mut ids: Vec<usize> = match (c.failures, c.failure_probability) {
        (Some(k), _) => {
            let mut all: Vec<usize> = (0..c.enrolled).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ name_seed(&c.name));
            all.shuffle(&mut rng);
            all.truncate(k);
            all
        }
        (None, Some(p)) => (0..c.enrolled)
            .filter(|i| unit_hash(&[&cfg.seed.to_le_bytes(), b"gate", patient_ext(&c.name, *i).as_bytes()]) < p)
            .collect(),
        (None, None) => Vec::new(),
    };
    ids.sort_unstable();
    let integrity = libm::round(c.data_integrity_share * ids.len() as f64) as usize;
    ids.iter().enumerate().map(|(n, i)| (patient_ext(&c.name, *i), if n < integrity { DATA_INTEGRITY } else { AUTHORIZATION })).collect()
}

fn name_seed(name: &str) -> u64 {
    (unit_hash(&[name.as_bytes()]) * (1u64 << 53) as f64) as u64
}

fn draw(cfg: &PilotConfig, what: &str, patient: &str) -> f64 {
    unit_hash(&[&cfg.seed.to_le_bytes(), what.as_bytes(), patient.as_bytes()])
}

/// A simulated clinic: its workspace and the gate it counts.
pub struct Clinic {
    pub profile: ClinicProfile,
    pub workspace: Workspace,
}

pub struct Simulation {
    pub config: PilotConfig,
    pub clinics: Vec<Clinic>,
    pub report: PilotReport,
}

/// Runs every clinic on its own in-memory workspace.
pub fn simulate(cfg: &PilotConfig, pathway: &[Declaration]) -> Result<Simulation, PilotError> {
    simulate_with(cfg, pathway, |_| Box::new(MemoryStore::new()))
}

/// As `simulate`, with a caller-chosen store per clinic.
pub fn simulate_with(
    cfg: &PilotConfig,
    pathway: &[Declaration],
    mut store_for: impl FnMut(&str) -> Box<dyn EventStore + Send>,
) -> Result<Simulation, PilotError> {
    cfg.validate()?;
    let mut clinics = Vec::new();
    for c in &cfg.clinics {
        let ws = run_clinic(cfg, c, pathway, store_for(&c.name))?;
        clinics.push(Clinic { profile: c.clone(), workspace: ws });
    }
    let logs: Vec<(&str, &dyn EventStore)> = clinics.iter().map(|c| (c.profile.name.as_str(), &*c.workspace.store as &dyn EventStore)).collect();
    let report = report_from_logs(&logs)?;
    Ok(Simulation { config: cfg.clone(), clinics, report })
}

fn trigger_for<'a>(ws: &'a Workspace, pathway: &str) -> Option<&'a str> {
    ws.triggers.values().find(|t| t.calls == pathway).map(|t| t.slug.as_str())
}

fn run_clinic(cfg: &PilotConfig, c: &ClinicProfile, pathway: &[Declaration], store: Box<dyn EventStore + Send>) -> Result<Workspace, PilotError> {
    let mut probe = Workspace::new(&c.name, Box::new(MemoryStore::new()), Adapters::new())?;
    probe.load(pathway)?;
    let (slug, gate) = probe
        .triggers
        .values()
        .find_map(|t| {
            let d = probe.diagrams.get(&t.calls)?;
            Some((t.calls.clone(), gate_node(d)?.to_string()))
        })
        .ok_or_else(|| PilotError::Config("pathway needs a trigger calling a diagram with a lab-order gate".into()))?;

    let mut adapters = Adapters::simulated(FaultSchedule::Never);
    adapters.register(GATE_ACTION, GateAdapter { gate, failing: failing_set(cfg, c) });
    let mut ws = Workspace::new(&c.name, store, adapters)?;
    ws.load(pathway)?;
    let trigger = trigger_for(&ws, &slug).expect("found above").to_string();

    for p in 0..cfg.providers_per_clinic {
        let mut r = Resource::new(format!("{}-provider-{p}", c.name), "contact");
        r.ext_type = Some("Provider".into());
        r.ext_data.insert("id".into(), Value::str(format!("{}-npi-{p}", c.name)));
        ws.upsert_resource(r);
    }
    for i in 0..c.enrolled {
        let mut r = Resource::new(format!("{}-patient-{i:05}", c.name), "contact").with_tags(["over-60"]);
        r.ext_type = Some("Patient".into());
        r.ext_data.insert("id".into(), Value::str(patient_ext(&c.name, i)));
        r.ext_data.insert("usualProviderId".into(), Value::str(format!("{}-npi-{}", c.name, i % cfg.providers_per_clinic)));
        ws.upsert_resource(r);
    }

    // Appointments spread round-robin over the clinic's active days.
    let start = VirtualClock::default().now();
    let end = start.checked_add_months(Months::new(c.active_months)).unwrap_or(start);
    let days = (end - start).num_days().max(1) as usize;
    let mut by_day: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..c.enrolled {
        by_day.entry(i * days / c.enrolled.max(1)).or_default().push(i);
    }
    for (day, patients) in by_day {
        ws.clock.set(start + Duration::days(day as i64) + Duration::hours(8));
        for i in patients {
            ws.add_tag(&format!("{}-patient-{i:05}", c.name), "upcoming-appointment")?;
        }
        let tick = ws.tick()?;
        let started = tick.triggers.get(&trigger).map(|r| r.started.clone()).unwrap_or_default();
        for run in started {
            drive(cfg, &mut ws, &run)?;
        }
        ws.store.flush()?;
    }
    Ok(ws)
}

/// Moves one run through its downstream waits until it ends.
fn drive(cfg: &PilotConfig, ws: &mut Workspace, run: &str) -> Result<(), PilotError> {
    for _ in 0..64 {
        let Some(summary) = ws.run(run) else { return Ok(()) };
        let Some(l) = summary.listener.clone() else { return Ok(()) };
        let patient = summary.bindings.get("patient").cloned().unwrap_or_default();
        match &l.kind {
            ListenerKind::Tag { resource, with, without } => {
                for t in without {
                    ws.remove_tag(resource, t)?;
                }
                for t in with {
                    let positive = match t.as_str() {
                        SCREENING_DONE => Some((SCREENING_POSITIVE, cfg.screening_positive_rate)),
                        ASSESSMENT_DONE => Some((ASSESSMENT_POSITIVE, cfg.assessment_positive_rate)),
                        _ => None,
                    };
                    if let Some((tag, rate)) = positive {
                        if draw(cfg, tag, &patient) < rate {
                            ws.add_tag(resource, tag)?;
                        }
                    }
                    ws.add_tag(resource, t)?;
                }
            }
            ListenerKind::Timer { .. } => {
                ws.signal(run, &Signal::TimerFired { listener_id: l.id.clone() })?;
            }
            k => {
                let choice = k.choices().first().map(|c| c.to_string()).unwrap_or_else(|| "proceed".into());
                ws.signal(run, &Signal::HumanDecision { node_id: l.node.clone(), choice, actor: ACTOR.into() })?;
            }
        }
        if ws.run(run).is_some_and(|s| s.listener.as_ref() == Some(&l)) {
            return Err(PilotError::Config(format!("run {run} is stuck at node {}", l.node)));
        }
    }
    Err(PilotError::Config(format!("run {run} did not settle")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClinicStats {
    pub name: String,
    pub enrolled: usize,
    pub completed: usize,
    pub errored: usize,
    /// Runs neither completed nor errored when the report was taken.
    pub open: usize,
    /// Percentage with two decimals, rounded half-up.
    pub success_rate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PilotReport {
    pub clinics: Vec<ClinicStats>,
    pub total: ClinicStats,
    /// Failed gate attempts' final reason, per errored run.
    pub failure_reasons: BTreeMap<String, usize>,
    /// Errored runs whose failure was not at a boundary.
    pub non_boundary_errors: usize,
}

/// `num / den` as a percentage string with two decimals, rounded half-up.
pub fn percent(num: usize, den: usize) -> String {
    if den == 0 {
        return "0.00".into();
    }
    let (n, d) = (num as u128 * 20_000, den as u128 * 2);
    let bp = (n + den as u128) / d;
    format!("{}.{:02}", bp / 100, bp % 100)
}

fn stats(name: &str, completed: usize, errored: usize, open: usize) -> ClinicStats {
    ClinicStats {
        name: name.to_string(),
        enrolled: completed + errored + open,
        completed,
        errored,
        open,
        success_rate: percent(completed, completed + errored),
    }
}

/// Builds the report by reading every run log; nothing else is consulted.
pub fn report_from_logs(logs: &[(&str, &dyn EventStore)]) -> Result<PilotReport, StoreError> {
    let mut clinics = Vec::new();
    let mut reasons = BTreeMap::new();
    let mut non_boundary = 0;
    let (mut tc, mut te, mut to) = (0, 0, 0);
    for (ws, store) in logs {
        let (mut completed, mut errored, mut open) = (0, 0, 0);
        for run in store.run_ids(ws)? {
            let records = store.read(ws, &run, 1)?;
            let terminal = records.iter().rev().find(|r| r.kind.is_terminal());
            match terminal.map(|r| r.kind) {
                Some(EventKind::RunCompleted) => completed += 1,
                Some(_) => {
                    errored += 1;
                    let end = terminal.expect("matched");
                    let boundary = end.payload.get("reason").and_then(|r| r.as_str()) == Some("boundary-failure");
                    if !boundary {
                        non_boundary += 1;
                    }
                    let reason = records
                        .iter()
                        .rev()
                        .find(|r| r.kind == EventKind::BoundaryOutcome && r.node_id == end.node_id && r.payload.get("ok") == Some(&serde_json::Value::Bool(false)))
                        .and_then(|r| r.payload.get("reason")?.as_str().map(String::from))
                        .unwrap_or_else(|| "unknown".into());
                    *reasons.entry(reason).or_insert(0) += 1;
                }
                None => open += 1,
            }
        }
        tc += completed;
        te += errored;
        to += open;
        clinics.push(stats(ws, completed, errored, open));
    }
    Ok(PilotReport { clinics, total: stats("total", tc, te, to), failure_reasons: reasons, non_boundary_errors: non_boundary })
}

impl core::fmt::Display for PilotReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "{:<12} {:>9} {:>9} {:>7} {:>8}", "clinic", "enrolled", "completed", "errored", "rate")?;
        for c in self.clinics.iter().chain(core::iter::once(&self.total)) {
            writeln!(f, "{:<12} {:>9} {:>9} {:>7} {:>7}%", c.name, c.enrolled, c.completed, c.errored, c.success_rate)?;
        }
        for (r, n) in &self.failure_reasons {
            writeln!(f, "failure {r} {n}")?;
        }
        Ok(())
    }
}
