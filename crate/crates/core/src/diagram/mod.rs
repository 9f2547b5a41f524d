//! The executable diagram D = (G, μ): nodes, labeled edges and their
//! metadata, built and checked from a parsed declaration.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::gfl::{self, slugify, DeclBody, Declaration, DiagramDecl, EdgeLabel, Expr, NodeType};
use crate::predicate::{ClaimKind, Predicate, PropertyClaim};
use crate::value::{Path, Value};

mod graph;
pub mod interchange;
mod schedule;

pub use graph::{detect_forks, topological_order, CycleWitness, Fork};
pub use schedule::Schedule;

/// Lanes that are core (statically verified) unless a lane says otherwise.
pub const DEFAULT_CORE_LANES: [&str; 2] = ["system", "runtime"];

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    /// Lowercase keyword used by `@lane` references.
    pub key: String,
    pub name: String,
    pub core: bool,
    pub attrs: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Edge {
    pub from: String,
    pub label: EdgeLabel,
    pub to: String,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            EdgeLabel::To => write!(f, "{}→{}", self.from, self.to),
            l => write!(f, "{} -{}→ {}", self.from, l.name(), self.to),
        }
    }
}

/// α(n): what a node calls.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBinding {
    /// Builtin or boundary action keyword, or a diagram slug.
    pub callee: String,
    /// `{ .key: term }` arguments in source order.
    pub args: Vec<(String, Expr)>,
    /// Non-map arguments, e.g. the message of `(:throw "...")`.
    pub positional: Vec<Expr>,
    pub assigns: Option<Path>,
    pub requires: Option<Predicate>,
    pub ensures: Option<Predicate>,
    /// The `.yes` predicate of a decision action.
    pub condition: Option<Predicate>,
}

impl ActionBinding {
    pub fn arg(&self, key: &str) -> Option<&Expr> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub node_type: NodeType,
    pub label: String,
    pub lane: String,
    /// λ_assigned; `None` when the source has no `assigned:` line.
    pub assigned: Option<Vec<String>>,
    pub description: Option<String>,
    pub ext_type: Option<String>,
    pub requires: Option<Predicate>,
    pub ensures: Option<Predicate>,
    pub properties: Vec<PropertyClaim>,
    pub action: Option<ActionBinding>,
    /// δ(n)
    pub subdiagram: Option<String>,
    /// List variable a queue node iterates over.
    pub iterate: Option<Path>,
    /// π(n), stored but not interpreted.
    pub layout: Option<(f64, f64)>,
    /// w(n) as (cost, time), stored but not interpreted.
    pub weight: Option<(f64, f64)>,
}

impl Node {
    pub fn callee(&self) -> Option<&str> {
        self.action.as_ref().map(|a| a.callee.as_str())
    }

    pub fn has_claim(&self, kind: ClaimKind) -> bool {
        self.properties.iter().any(|c| c.kind == kind)
    }

    /// Node and action preconditions together.
    pub fn all_requires(&self) -> Vec<&Predicate> {
        let action = self.action.as_ref().and_then(|a| a.requires.as_ref());
        self.requires.iter().chain(action).collect()
    }

    pub fn all_ensures(&self) -> Vec<&Predicate> {
        let action = self.action.as_ref().and_then(|a| a.ensures.as_ref());
        action.into_iter().chain(self.ensures.iter()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagram {
    pub slug: String,
    pub name: String,
    pub role: Option<String>,
    pub description: Option<String>,
    pub lanes: Vec<Lane>,
    pub inputs: Vec<(String, Value)>,
    pub outputs: Vec<(String, Value)>,
    pub requires: Vec<Predicate>,
    pub ensures: Vec<Predicate>,
    pub properties: Vec<PropertyClaim>,
    pub variables: Vec<(Path, Value)>,
    /// ψ; empty until a run binds contacts.
    pub lane_contacts: BTreeMap<String, String>,
    /// Declaration order.
    pub nodes: Vec<Node>,
    /// Declaration order.
    pub edges: Vec<Edge>,
    /// sha256 of the canonical GFL text, hex.
    pub content_hash: String,
    source: Declaration,
    reach: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("declaration `{0}` is not a diagram")]
    NotADiagram(String),
    #[error("diagram has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("duplicate lane {0}")]
    DuplicateLane(String),
    #[error("edge {from} -{label}-> {target}: dangling target {target:?}")]
    DanglingEdge { from: String, label: String, target: String },
    #[error("node {node}: two `{label}` edges")]
    DuplicateEdgeLabel { node: String, label: String },
    #[error("node {node}: unknown lane @{lane}")]
    UnknownLane { node: String, lane: String },
    #[error("node {node}: unknown assigned lane :{lane}")]
    UnknownAssignedLane { node: String, lane: String },
    #[error("decision node {0} has no control edge")]
    DecisionWithoutBranch(String),
    #[error("node {node}: {reason}")]
    InvalidAction { node: String, reason: String },
    #[error("{0}")]
    InvalidLiteral(String),
}

impl Diagram {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn lane(&self, key: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.key == key)
    }

    pub fn core_lanes(&self) -> BTreeSet<&str> {
        self.lanes.iter().filter(|l| l.core).map(|l| l.key.as_str()).collect()
    }

    pub fn is_core(&self, node: &Node) -> bool {
        self.lane(&node.lane).is_some_and(|l| l.core)
    }

    pub fn out_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.from == id)
    }

    pub fn in_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn successor(&self, id: &str, label: EdgeLabel) -> Option<&str> {
        self.edges.iter().find(|e| e.from == id && e.label == label).map(|e| e.to.as_str())
    }

    /// Nodes with no incoming edges, ascending by id.
    pub fn entries(&self) -> Vec<&str> {
        let mut v: Vec<&str> =
            self.nodes.iter().filter(|n| self.in_edges(&n.id).next().is_none()).map(|n| n.id.as_str()).collect();
        v.sort_by(|a, b| gfl::cmp_node_ids(a, b));
        v
    }

    /// The declaration this diagram was built from.
    pub fn declaration(&self) -> &Declaration {
        &self.source
    }

    pub fn input_type(&self, name: &str) -> Option<&Value> {
        self.inputs.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    /// True when `to` is reachable from `from` by one or more edges.
    pub fn reaches(&self, from: &str, to: &str) -> bool {
        self.reach.get(from).is_some_and(|s| s.contains(to))
    }

    /// Transitive successors of `from` (excluding `from` unless on a cycle).
    pub fn reachable_from(&self, from: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = self.out_edges(from).map(|e| e.to.as_str()).collect();
        while let Some(n) = stack.pop() {
            if seen.insert(n.to_string()) {
                stack.extend(self.out_edges(n).map(|e| e.to.as_str()));
            }
        }
        seen
    }
}

fn literal(e: &Expr, what: &str) -> Result<Value, StructureError> {
    e.to_literal().ok_or_else(|| StructureError::InvalidLiteral(alloc::format!("{what}: expected a literal, found {e}")))
}

fn action(node: &gfl::NodeDecl) -> Result<Option<ActionBinding>, StructureError> {
    let Some(a) = &node.action else { return Ok(None) };
    let bad = |reason: String| StructureError::InvalidAction { node: node.id.clone(), reason };
    let (callee, raw_args) = match &a.calls {
        Expr::Keyword(k) => (k.clone(), Vec::new()),
        Expr::Call { head, args } => (head.clone(), args.clone()),
        other => return Err(bad(alloc::format!("`calls` must be a keyword or call, found {other}"))),
    };
    let mut args = Vec::new();
    let mut positional = Vec::new();
    for e in raw_args {
        match e {
            Expr::Map(m) if args.is_empty() => args = m,
            other => positional.push(other),
        }
    }
    let mut condition = None;
    if let Some((_, e)) = args.iter().find(|(k, _)| k == "yes") {
        condition = Some(Predicate::from_expr(e).map_err(|m| bad(alloc::format!("`.yes` {m}")))?);
    }
    if callee == "condition" && condition.is_none() {
        return Err(bad("`:condition` needs a `.yes` predicate".into()));
    }
    Ok(Some(ActionBinding {
        callee,
        args,
        positional,
        assigns: a.assigns.clone(),
        requires: a.requires.clone(),
        ensures: a.ensures.clone(),
        condition,
    }))
}

fn lane_core(key: &str, attrs: &[(String, Value)]) -> bool {
    match attrs.iter().find(|(k, _)| k == "core") {
        Some((_, Value::Bool(b))) => *b,
        _ => DEFAULT_CORE_LANES.contains(&key),
    }
}

/// Builds D = (G, μ) from a diagram declaration, reporting every structural
/// problem found.
pub fn build(decl: &Declaration) -> Result<Diagram, Vec<StructureError>> {
    let DeclBody::Diagram(d) = &decl.body else {
        return Err(alloc::vec![StructureError::NotADiagram(decl.name.clone())]);
    };
    let mut errs = Vec::new();
    let lanes = build_lanes(d, &mut errs);
    let lane_keys: BTreeSet<&str> = lanes.iter().map(|l| l.key.as_str()).collect();

    if d.nodes.is_empty() {
        errs.push(StructureError::Empty);
    }
    let mut ids = BTreeSet::new();
    for n in &d.nodes {
        if !ids.insert(n.id.as_str()) {
            errs.push(StructureError::DuplicateNode(n.id.clone()));
        }
    }
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for n in &d.nodes {
        let lane = slugify(&n.lane);
        if !lane_keys.contains(lane.as_str()) {
            errs.push(StructureError::UnknownLane { node: n.id.clone(), lane: lane.clone() });
        }
        let assigned = n.assigned.as_ref().map(|v| v.iter().map(|l| slugify(l)).collect::<Vec<_>>());
        for l in assigned.iter().flatten() {
            if !lane_keys.contains(l.as_str()) {
                errs.push(StructureError::UnknownAssignedLane { node: n.id.clone(), lane: l.clone() });
            }
        }
        let mut labels = BTreeSet::new();
        for e in &n.edges {
            if !ids.contains(e.target.as_str()) {
                errs.push(StructureError::DanglingEdge {
                    from: n.id.clone(),
                    label: e.label.name().into(),
                    target: e.target.clone(),
                });
            }
            if e.label.is_control() && !labels.insert(e.label) {
                errs.push(StructureError::DuplicateEdgeLabel { node: n.id.clone(), label: e.label.name().into() });
            }
            edges.push(Edge { from: n.id.clone(), label: e.label, to: e.target.clone() });
        }
        if n.node_type == NodeType::Decision && !n.edges.iter().any(|e| e.label.is_control()) {
            errs.push(StructureError::DecisionWithoutBranch(n.id.clone()));
        }
        let action = match action(n) {
            Ok(a) => a,
            Err(e) => {
                errs.push(e);
                None
            }
        };
        nodes.push(Node {
            id: n.id.clone(),
            node_type: n.node_type,
            label: n.label.clone(),
            lane,
            assigned,
            description: n.description.clone(),
            ext_type: n.ext_type.clone(),
            requires: n.requires.clone(),
            ensures: n.ensures.clone(),
            properties: n.properties.clone(),
            action,
            subdiagram: n.subdiagram.clone(),
            iterate: n.iterate.clone(),
            layout: n.layout,
            weight: n.weight,
        });
    }
    let mut literal_list = |pairs: &[(String, Expr)], what: &str| -> Vec<(String, Value)> {
        pairs
            .iter()
            .filter_map(|(k, e)| match literal(e, &alloc::format!("{what} .{k}")) {
                Ok(v) => Some((k.clone(), v)),
                Err(er) => {
                    errs.push(er);
                    None
                }
            })
            .collect()
    };
    let inputs = literal_list(&d.inputs, "input");
    let outputs = literal_list(&d.outputs, "output");
    let mut variables = Vec::new();
    for (p, e) in &d.variables {
        match literal(e, &alloc::format!("variable {p}")) {
            Ok(v) => variables.push((p.clone(), v)),
            Err(er) => errs.push(er),
        }
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    let text = gfl::serialize(decl);
    let mut d = Diagram {
        slug: decl.slug.clone(),
        name: decl.name.clone(),
        role: decl.role.clone(),
        description: d.description.clone(),
        lanes,
        inputs,
        outputs,
        requires: d.requires.clone(),
        ensures: d.ensures.clone(),
        properties: d.properties.clone(),
        variables,
        lane_contacts: BTreeMap::new(),
        nodes,
        edges,
        content_hash: hex::encode(Sha256::digest(text.as_bytes())),
        source: decl.clone(),
        reach: BTreeMap::new(),
    };
    d.reach = d.nodes.iter().map(|n| (n.id.clone(), d.reachable_from(&n.id))).collect();
    Ok(d)
}

fn build_lanes(d: &DiagramDecl, errs: &mut Vec<StructureError>) -> Vec<Lane> {
    let mut lanes: Vec<Lane> = Vec::new();
    for l in &d.swimlanes {
        let key = slugify(&l.name);
        if lanes.iter().any(|o| o.key == key) {
            errs.push(StructureError::DuplicateLane(key));
            continue;
        }
        let mut attrs = Vec::new();
        for (k, e) in &l.attrs {
            match literal(e, &alloc::format!("lane {} .{k}", l.name)) {
                Ok(v) => attrs.push((k.clone(), v)),
                Err(er) => errs.push(er),
            }
        }
        let core = lane_core(&key, &attrs);
        lanes.push(Lane { key, name: l.name.clone(), core, attrs });
    }
    lanes
}

/// Parses GFL text and builds the diagram declared as `slug` (or the only one).
pub fn from_source(text: &str, slug: Option<&str>) -> Result<Diagram, String> {
    let decls = gfl::parse_str(text).map_err(|e| e.to_string())?;
    let mut ds = decls.iter().filter(|d| d.as_diagram().is_some() && slug.is_none_or(|s| s == d.slug));
    let d = ds.next().ok_or_else(|| String::from("no matching diagram"))?;
    build(d).map_err(|es| es.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
}
