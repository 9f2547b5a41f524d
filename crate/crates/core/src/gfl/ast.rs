//! Declaration ASTs produced by the GFL parser.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Expr;
use crate::predicate::{CmpOp, Predicate, PropertyClaim, Term};
use crate::value::{Path, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclKind {
    Diagram,
    Query,
    Metric,
    Trigger,
}

impl DeclKind {
    pub fn name(self) -> &'static str {
        match self {
            DeclKind::Diagram => "diagram",
            DeclKind::Query => "query",
            DeclKind::Metric => "metric",
            DeclKind::Trigger => "trigger",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Declaration {
    pub name: String,
    pub slug: String,
    /// Bracketed annotation after the construct keyword, e.g. `blueprint`.
    pub role: Option<String>,
    pub body: DeclBody,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeclBody {
    Diagram(DiagramDecl),
    Query(QueryDecl),
    Metric(MetricDecl),
    Trigger(TriggerDecl),
}

impl Declaration {
    pub fn kind(&self) -> DeclKind {
        match self.body {
            DeclBody::Diagram(_) => DeclKind::Diagram,
            DeclBody::Query(_) => DeclKind::Query,
            DeclBody::Metric(_) => DeclKind::Metric,
            DeclBody::Trigger(_) => DeclKind::Trigger,
        }
    }

    pub fn as_diagram(&self) -> Option<&DiagramDecl> {
        match &self.body {
            DeclBody::Diagram(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_query(&self) -> Option<&QueryDecl> {
        match &self.body {
            DeclBody::Query(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_metric(&self) -> Option<&MetricDecl> {
        match &self.body {
            DeclBody::Metric(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_trigger(&self) -> Option<&TriggerDecl> {
        match &self.body {
            DeclBody::Trigger(t) => Some(t),
            _ => None,
        }
    }
}

/// Lowercases and replaces runs of non-alphanumerics with single dashes.
pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    let mut dash = false;
    for c in name.chars() {
        if c.is_alphanumeric() {
            if dash && !out.is_empty() {
                out.push('-');
            }
            dash = false;
            out.extend(c.to_lowercase());
        } else {
            dash = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagramDecl {
    pub description: Option<String>,
    pub swimlanes: Vec<LaneDecl>,
    pub inputs: Vec<(String, Expr)>,
    pub outputs: Vec<(String, Expr)>,
    pub requires: Vec<Predicate>,
    pub ensures: Vec<Predicate>,
    pub properties: Vec<PropertyClaim>,
    pub variables: Vec<(Path, Expr)>,
    pub nodes: Vec<NodeDecl>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneDecl {
    pub name: String,
    pub attrs: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Task,
    Meeting,
    Report,
    Object,
    Decision,
    Queue,
    Wait,
    Milestone,
    Diagram,
}

impl NodeType {
    pub const ALL: [NodeType; 9] = [
        NodeType::Task,
        NodeType::Meeting,
        NodeType::Report,
        NodeType::Object,
        NodeType::Decision,
        NodeType::Queue,
        NodeType::Wait,
        NodeType::Milestone,
        NodeType::Diagram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Task => "task",
            NodeType::Meeting => "meeting",
            NodeType::Report => "report",
            NodeType::Object => "object",
            NodeType::Decision => "decision",
            NodeType::Queue => "queue",
            NodeType::Wait => "wait",
            NodeType::Milestone => "milestone",
            NodeType::Diagram => "diagram",
        }
    }

    pub fn from_name(s: &str) -> Option<NodeType> {
        NodeType::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    To,
    Yes,
    No,
    Maybe,
}

impl EdgeLabel {
    pub fn name(self) -> &'static str {
        match self {
            EdgeLabel::To => "to",
            EdgeLabel::Yes => "yes",
            EdgeLabel::No => "no",
            EdgeLabel::Maybe => "maybe",
        }
    }

    pub fn from_name(s: &str) -> Option<EdgeLabel> {
        match s {
            "to" => Some(EdgeLabel::To),
            "yes" => Some(EdgeLabel::Yes),
            "no" => Some(EdgeLabel::No),
            "maybe" => Some(EdgeLabel::Maybe),
            _ => None,
        }
    }

    pub fn is_control(self) -> bool {
        self != EdgeLabel::To
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDecl {
    pub label: EdgeLabel,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDecl {
    pub id: String,
    pub node_type: NodeType,
    pub label: String,
    pub lane: String,
    pub edges: Vec<EdgeDecl>,
    pub assigned: Option<Vec<String>>,
    pub description: Option<String>,
    pub ext_type: Option<String>,
    pub requires: Option<Predicate>,
    pub ensures: Option<Predicate>,
    pub properties: Vec<PropertyClaim>,
    pub action: Option<ActionDecl>,
    pub subdiagram: Option<String>,
    pub iterate: Option<Path>,
    pub layout: Option<(f64, f64)>,
    pub weight: Option<(f64, f64)>,
}

impl NodeDecl {
    pub fn new(id: &str, node_type: NodeType, label: &str, lane: &str) -> Self {
        NodeDecl {
            id: id.into(),
            node_type,
            label: label.into(),
            lane: lane.into(),
            edges: Vec::new(),
            assigned: None,
            description: None,
            ext_type: None,
            requires: None,
            ensures: None,
            properties: Vec::new(),
            action: None,
            subdiagram: None,
            iterate: None,
            layout: None,
            weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDecl {
    /// A keyword (`:next`) or a call (`(:multiply {...})`).
    pub calls: Expr,
    pub assigns: Option<Path>,
    pub requires: Option<Predicate>,
    pub ensures: Option<Predicate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDecl {
    pub description: Option<String>,
    pub resource_type: String,
    pub ext_type: Option<String>,
    pub filters: Vec<Filter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Filter {
    With { tag: String },
    Without { tag: String },
    Field { name: String, op: CmpOp, value: Value },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Count,
    Sum,
    Avg,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Count => "count",
            Aggregation::Sum => "sum",
            Aggregation::Avg => "avg",
        }
    }

    pub fn from_name(s: &str) -> Option<Aggregation> {
        match s {
            "count" => Some(Aggregation::Count),
            "sum" => Some(Aggregation::Sum),
            "avg" => Some(Aggregation::Avg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interval {
    Hourly,
    Daily,
    Weekly,
    Monthly,
    Yearly,
}

impl Interval {
    pub fn name(self) -> &'static str {
        match self {
            Interval::Hourly => "hourly",
            Interval::Daily => "daily",
            Interval::Weekly => "weekly",
            Interval::Monthly => "monthly",
            Interval::Yearly => "yearly",
        }
    }

    pub fn from_name(s: &str) -> Option<Interval> {
        match s {
            "hourly" => Some(Interval::Hourly),
            "daily" => Some(Interval::Daily),
            "weekly" => Some(Interval::Weekly),
            "monthly" => Some(Interval::Monthly),
            "yearly" => Some(Interval::Yearly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricDecl {
    pub description: Option<String>,
    pub query: String,
    pub aggregation: Aggregation,
    pub field: Option<String>,
    pub schedule: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDecl {
    pub trigger_type: Option<String>,
    pub description: Option<String>,
    pub active: Option<bool>,
    pub auto_start: Option<bool>,
    pub schedule: Option<Interval>,
    pub source_query: String,
    pub repeat: Option<Interval>,
    pub calls: String,
    pub assignment: Vec<Assignment>,
}

impl TriggerDecl {
    pub fn is_active(&self) -> bool {
        self.active.unwrap_or(true)
    }

    pub fn auto_starts(&self) -> bool {
        self.auto_start.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    /// `(:assign-swimlane-contact {.swimlane: :lane .contactId: term})`
    Contact { lane: String, contact: Term },
    /// `(:assign-swimlane-contact-by-ext-id {.swimlane: :lane .extId: term})`
    ContactByExtId { lane: String, ext_id: Term },
}

impl Assignment {
    pub fn lane(&self) -> &str {
        match self {
            Assignment::Contact { lane, .. } | Assignment::ContactByExtId { lane, .. } => lane,
        }
    }
}

/// Node ids order by numeric prefix, then suffix, then full text.
pub fn cmp_node_ids(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (Option<u64>, &str) {
        let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
        let n = if digits == 0 { None } else { s[..digits].parse().ok() };
        (n, &s[digits..])
    }
    let (na, sa) = split(a);
    let (nb, sb) = split(b);
    let by_num = match (na, nb) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_num.then_with(|| sa.cmp(sb)).then_with(|| a.cmp(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slugify("Sales Reports Pending"), "sales-reports-pending");
        assert_eq!(slugify("Calculate Sum of Squares (Bounded)"), "calculate-sum-of-squares-bounded");
        assert_eq!(slugify("  Approve?  "), "approve");
    }

    #[test]
    fn node_id_order() {
        let mut ids = alloc::vec!["10", "5b", "2", "5a", "1", "09"];
        ids.sort_by(|a, b| cmp_node_ids(a, b));
        assert_eq!(ids, ["1", "2", "5a", "5b", "09", "10"]);
    }
}
