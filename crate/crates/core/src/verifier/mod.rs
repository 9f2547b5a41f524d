//! Static verification and admission of verified-core diagrams.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::diagram::{detect_forks, topological_order, CycleWitness, Diagram, Edge, Fork};
use crate::gfl::NodeType;
use crate::predicate::{implies, Implication, Predicate, PropertyClaim};
use crate::runtime::builtins;
use crate::value::{Path, State};

pub mod discharge;
pub mod eval;
pub mod obligations;

pub use discharge::{discharge, DEFAULT_BUDGET};
pub use obligations::generate_obligations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObligationKind {
    #[serde(rename = "edge-composition")]
    Edge,
    #[serde(rename = "diagram-precondition-entry")]
    Entry,
    #[serde(rename = "node-action-contract")]
    Contract,
    #[serde(rename = "diagram-postcondition-exit")]
    Exit,
    #[serde(rename = "property-empirical")]
    Property,
}

impl ObligationKind {
    pub fn name(self) -> &'static str {
        match self {
            ObligationKind::Edge => "edge-composition",
            ObligationKind::Entry => "diagram-precondition-entry",
            ObligationKind::Contract => "node-action-contract",
            ObligationKind::Exit => "diagram-postcondition-exit",
            ObligationKind::Property => "property-empirical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Diagram,
    Node(String),
    Edge(Edge),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Goal {
    Predicate(Predicate),
    Claim(PropertyClaim),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Status {
    Pending,
    Proven,
    /// `witness` falsifies the obligation; `inputs`, when found, reach such
    /// a state in a concrete run.
    Refuted { witness: State, inputs: Option<State> },
    Unknown,
    EmpiricallyPassed { samples: usize },
    EmpiricallyFailed { counterexample: State },
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Proven => "proven",
            Status::Refuted { .. } => "refuted",
            Status::Unknown => "unknown",
            Status::EmpiricallyPassed { .. } => "empirically-passed",
            Status::EmpiricallyFailed { .. } => "empirically-failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obligation {
    pub id: String,
    pub kind: ObligationKind,
    pub source: Source,
    pub antecedent: Vec<Predicate>,
    pub goal: Goal,
    /// The antecedent carries accumulated path context, not just the
    /// neighbouring contract.
    pub contextual: bool,
    pub status: Status,
}

impl Obligation {
    pub fn is_empirical(&self) -> bool {
        self.kind == ObligationKind::Property
    }

    /// Proven for logical obligations, passed for empirical ones.
    pub fn is_satisfied(&self) -> bool {
        if self.is_empirical() {
            matches!(self.status, Status::EmpiricallyPassed { .. })
        } else {
            self.status == Status::Proven
        }
    }
}

impl fmt::Display for Obligation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "obligation {} {} {}", self.id, self.kind.name(), self.status.name())?;
        match &self.status {
            Status::Refuted { witness, inputs } => {
                write!(f, " witness {}", witness.canonical())?;
                if let Some(i) = inputs {
                    write!(f, " inputs {}", i.canonical())?;
                }
            }
            Status::EmpiricallyPassed { samples } => write!(f, " samples {samples}")?,
            Status::EmpiricallyFailed { counterexample } => write!(f, " counterexample {}", counterexample.canonical())?,
            _ => {}
        }
        if self.contextual {
            f.write_str(" contextual")?;
        }
        Ok(())
    }
}

/// Why a diagram is outside the verified core.
#[derive(Debug, Clone, PartialEq)]
pub enum Reason {
    Cycle(CycleWitness),
    Fork(Fork),
    NonCoreLane { lane: String, nodes: Vec<String> },
    Effectful { node: String, callee: String },
    RuntimeOnly { node: String, node_type: NodeType },
    /// Path exploration stopped early, so obligations may be missing.
    Incomplete,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reason::Cycle(w) => write!(f, "cycle {w}"),
            Reason::Fork(k) => write!(f, "fork at {} to {}", k.node, k.targets.join(", ")),
            Reason::NonCoreLane { lane, nodes } => write!(f, "lane {lane} is not a core lane (nodes {})", nodes.join(", ")),
            Reason::Effectful { node, callee } => write!(f, "effectful action :{callee} at node {node}"),
            Reason::RuntimeOnly { node, node_type } => write!(f, "{} node {node} is an effect boundary", node_type.name()),
            Reason::Incomplete => f.write_str("path exploration incomplete"),
        }
    }
}

impl Serialize for Reason {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn check_admissibility(d: &Diagram) -> Result<(), Vec<Reason>> {
    let mut reasons = Vec::new();
    if let Err(w) = topological_order(d) {
        reasons.push(Reason::Cycle(w));
    }
    reasons.extend(detect_forks(d).into_iter().map(Reason::Fork));
    let mut lanes: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for n in &d.nodes {
        if !d.is_core(n) {
            lanes.entry(n.lane.as_str()).or_default().push(n.id.clone());
        }
    }
    // Lanes in declaration order.
    for l in &d.lanes {
        if let Some(nodes) = lanes.remove(l.key.as_str()) {
            reasons.push(Reason::NonCoreLane { lane: l.key.clone(), nodes });
        }
    }
    for (lane, nodes) in lanes {
        reasons.push(Reason::NonCoreLane { lane: lane.to_string(), nodes });
    }
    for n in &d.nodes {
        let runtime_only = match n.node_type {
            NodeType::Wait | NodeType::Meeting | NodeType::Object | NodeType::Queue | NodeType::Diagram => true,
            // A decision without a condition waits for a person.
            NodeType::Decision => n.action.as_ref().is_none_or(|a| a.callee != "condition"),
            _ => false,
        };
        if let Some(c) = n.callee().filter(|c| !builtins::is_builtin(c)) {
            reasons.push(Reason::Effectful { node: n.id.clone(), callee: c.to_string() });
        }
        if runtime_only {
            reasons.push(Reason::RuntimeOnly { node: n.id.clone(), node_type: n.node_type });
        }
    }
    if reasons.is_empty() {
        Ok(())
    } else {
        Err(reasons)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissionReport {
    pub slug: String,
    pub content_hash: String,
    pub reasons: Vec<Reason>,
    pub obligations: Vec<Obligation>,
    pub admitted: bool,
}

impl AdmissionReport {
    pub fn structure_ok(&self) -> bool {
        self.reasons.is_empty()
    }

    /// Obligations that block admission.
    pub fn failures(&self) -> impl Iterator<Item = &Obligation> {
        self.obligations.iter().filter(|o| !o.is_satisfied())
    }
}

/// One line per fact; stable for identical input.
impl fmt::Display for AdmissionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "diagram {} {}", self.slug, self.content_hash)?;
        writeln!(f, "structure {}", if self.structure_ok() { "ok" } else { "rejected" })?;
        for r in &self.reasons {
            writeln!(f, "reason {r}")?;
        }
        for o in &self.obligations {
            writeln!(f, "{o}")?;
        }
        writeln!(f, "verdict {}", if self.admitted { "admitted" } else { "rejected" })
    }
}

/// Structure check, obligation generation and discharge.
pub fn verify(d: &Diagram, budget: usize) -> AdmissionReport {
    let mut report =
        AdmissionReport { slug: d.slug.clone(), content_hash: d.content_hash.clone(), reasons: Vec::new(), obligations: Vec::new(), admitted: false };
    if let Err(rs) = check_admissibility(d) {
        report.reasons = rs;
        return report;
    }
    let g = obligations::generate(d);
    if g.truncated {
        report.reasons.push(Reason::Incomplete);
    }
    report.obligations = discharge(d, &g.obligations, budget);
    report.admitted = report.structure_ok() && report.obligations.iter().all(Obligation::is_satisfied);
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Automation {
    pub id: String,
    pub slug: String,
    pub content_hash: String,
    pub inputs: Vec<String>,
    pub requires: Vec<Predicate>,
    pub ensures: Vec<Predicate>,
    pub obligations: Vec<Obligation>,
    pub admitted_at: String,
}

pub fn automation_id(slug: &str, content_hash: &str) -> String {
    format!("{slug}@{}", &content_hash[..content_hash.len().min(12)])
}

/// Admitted automations keyed by slug and content hash.
#[derive(Debug, Clone, Default)]
pub struct AutomationLibrary {
    entries: BTreeMap<(String, String), Automation>,
}

impl AutomationLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Verifies and stores `d`. Identical content returns the stored entry.
    pub fn admit(&mut self, d: &Diagram, budget: usize, at: &str) -> Result<Automation, AdmissionReport> {
        let key = (d.slug.clone(), d.content_hash.clone());
        if let Some(a) = self.entries.get(&key) {
            return Ok(a.clone());
        }
        let report = verify(d, budget);
        if !report.admitted {
            return Err(report);
        }
        let a = Automation {
            id: automation_id(&d.slug, &d.content_hash),
            slug: d.slug.clone(),
            content_hash: d.content_hash.clone(),
            inputs: d.inputs.iter().map(|(k, _)| k.clone()).collect(),
            requires: d.requires.clone(),
            ensures: d.ensures.clone(),
            obligations: report.obligations,
            admitted_at: at.to_string(),
        };
        self.entries.insert(key, a.clone());
        Ok(a)
    }

    /// Adds an automation loaded from storage.
    pub fn insert(&mut self, a: Automation) {
        self.entries.insert((a.slug.clone(), a.content_hash.clone()), a);
    }

    pub fn get(&self, slug: &str, content_hash: &str) -> Option<&Automation> {
        self.entries.get(&(slug.to_string(), content_hash.to_string()))
    }

    pub fn by_slug<'a>(&'a self, slug: &'a str) -> impl Iterator<Item = &'a Automation> + 'a {
        self.entries.values().filter(move |a| a.slug == slug)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Automation> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindingError {
    #[error("downstream input {0} is unbound")]
    Unbound(String),
    #[error("{0} is not a downstream input")]
    UnknownInput(String),
}

/// Whether `up`'s ensures establish `down`'s requires once each downstream
/// input is bound to an upstream path (usually under `$.return`).
pub fn check_composition(up: &Automation, down: &Automation, bindings: &BTreeMap<String, Path>) -> Result<Implication, BindingError> {
    if let Some(k) = bindings.keys().find(|k| !down.inputs.contains(k)) {
        return Err(BindingError::UnknownInput(k.clone()));
    }
    if let Some(k) = down.inputs.iter().find(|k| !bindings.contains_key(*k)) {
        return Err(BindingError::Unbound(k.clone()));
    }
    let mut ante = Vec::new();
    for atom in up.ensures.iter().flat_map(|p| p.conjuncts()) {
        let paths = atom.paths();
        for (k, from) in bindings {
            if paths.is_empty() || !paths.iter().all(|p| p.starts_with(from)) {
                continue;
            }
            let to = Path::new(alloc::vec![k.clone()]).expect("nonempty");
            let renamed = atom.map_paths(&|p: &Path| p.rebase(from, &to));
            if !ante.contains(&renamed) {
                ante.push(renamed);
            }
        }
    }
    let mut unknown = false;
    for r in &down.requires {
        match implies(&ante, r) {
            Implication::Proven => {}
            Implication::Unknown => unknown = true,
            refuted => return Ok(refuted),
        }
    }
    Ok(if unknown { Implication::Unknown } else { Implication::Proven })
}
