//! Tagged resources, cohort queries, metrics and triggers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{DateTime, Datelike, Duration, Months, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::gfl::{Aggregation, Assignment, DeclBody, Declaration, Filter, Interval};
use crate::predicate::eval::resource_id;
use crate::predicate::{CmpOp, EvalError, ResourceContext, Term};
use crate::value::{State, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CohortError {
    #[error("unknown resource {0}")]
    UnknownResource(String),
    #[error("unknown query {0}")]
    UnknownQuery(String),
    #[error("cannot resolve lane {lane} for {resource}")]
    AssignmentUnresolved { resource: String, lane: String },
    #[error("probability {p} or step count {k} out of range")]
    Domain { p: String, k: i64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Resource {
    pub id: String,
    pub resource_type: String,
    #[serde(default)]
    pub ext_type: Option<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub fields: BTreeMap<String, Value>,
    #[serde(default)]
    pub ext_data: BTreeMap<String, Value>,
}

impl Resource {
    pub fn new(id: impl Into<String>, resource_type: impl Into<String>) -> Self {
        Resource { id: id.into(), resource_type: resource_type.into(), ..Default::default() }
    }

    pub fn with_tags<'a>(mut self, tags: impl IntoIterator<Item = &'a str>) -> Self {
        self.tags.extend(tags.into_iter().map(String::from));
        self
    }

    /// The record runs see as `$.subject`.
    pub fn to_value(&self) -> Value {
        Value::map([
            ("id", Value::str(self.id.clone())),
            ("resourceType", Value::keyword(self.resource_type.clone())),
            ("extType", self.ext_type.clone().map_or(Value::Null, Value::Str)),
            ("tags", Value::List(self.tags.iter().map(|t| Value::keyword(t.clone())).collect())),
            ("fields", Value::Map(self.fields.clone())),
            ("extData", Value::Map(self.ext_data.clone())),
        ])
    }

    /// The binding record for a swimlane contact.
    pub fn contact_record(&self) -> Value {
        Value::map([
            ("id", Value::str(self.id.clone())),
            ("ext-id", self.ext_data.get("id").cloned().unwrap_or(Value::Null)),
            ("ext-type", self.ext_type.clone().map_or(Value::Null, Value::Str)),
        ])
    }
}

/// A journaled tag mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagChange {
    pub resource: String,
    pub tag: String,
    pub added: bool,
    /// Tags after the change.
    pub tags: Vec<String>,
}

/// One workspace's resource universe.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Resources {
    map: BTreeMap<String, Resource>,
    pub journal: Vec<TagChange>,
}

impl Resources {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces by id.
    pub fn upsert(&mut self, r: Resource) {
        self.map.insert(r.id.clone(), r);
    }

    pub fn get(&self, id: &str) -> Option<&Resource> {
        self.map.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Resource> {
        self.map.values()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Returns the change, or `None` when the tag was already present.
    pub fn add_tag(&mut self, id: &str, tag: &str) -> Result<Option<TagChange>, CohortError> {
        self.mutate(id, tag, true)
    }

    pub fn remove_tag(&mut self, id: &str, tag: &str) -> Result<Option<TagChange>, CohortError> {
        self.mutate(id, tag, false)
    }

    fn mutate(&mut self, id: &str, tag: &str, add: bool) -> Result<Option<TagChange>, CohortError> {
        let r = self.map.get_mut(id).ok_or_else(|| CohortError::UnknownResource(id.to_string()))?;
        let changed = if add { r.tags.insert(tag.to_string()) } else { r.tags.remove(tag) };
        if !changed {
            return Ok(None);
        }
        let c = TagChange { resource: id.to_string(), tag: tag.to_string(), added: add, tags: r.tags.iter().cloned().collect() };
        self.journal.push(c.clone());
        Ok(Some(c))
    }

    /// Contacts whose `extData.id` equals `ext_id`.
    pub fn by_ext_id(&self, ext_id: &Value) -> Vec<&Resource> {
        self.map.values().filter(|r| r.resource_type == "contact" && r.ext_data.get("id") == Some(ext_id)).collect()
    }
}

impl ResourceContext for Resources {
    fn has_tag(&self, resource: &Value, tag: &str) -> Result<bool, EvalError> {
        let id = resource_id(resource).ok_or_else(|| EvalError::UnknownResource(resource.to_canonical_string()))?;
        let r = self.get(id).ok_or_else(|| EvalError::UnknownResource(id.to_string()))?;
        Ok(r.tags.contains(tag))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub slug: String,
    pub name: String,
    pub resource_type: String,
    pub ext_type: Option<String>,
    pub filters: Vec<Filter>,
}

/// Counters from one query evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueryStats {
    pub scanned: usize,
    /// Field filters on a field the resource lacks.
    pub unknown_field: usize,
    /// Ordering filters between values of different types.
    pub type_mismatch: usize,
}

enum FieldTest {
    Pass,
    Fail,
    Missing,
    Mismatch,
}

fn field_test(r: &Resource, name: &str, op: CmpOp, lit: &Value) -> FieldTest {
    let Some(v) = r.fields.get(name) else { return FieldTest::Missing };
    let ord = match (v, lit) {
        (Value::Number(a), Value::Number(b)) => a.partial_cmp(b),
        // ISO-8601 dates are fixed width, so text order is time order.
        (Value::Str(a), Value::Str(b)) | (Value::Keyword(a), Value::Keyword(b)) => Some(a.cmp(b)),
        _ => None,
    };
    match (op, ord) {
        (CmpOp::Eq, _) => bool_test(v == lit),
        (CmpOp::Ne, _) => bool_test(v != lit),
        (op, Some(o)) => bool_test(op.apply_ord(o)),
        (_, None) => FieldTest::Mismatch,
    }
}

fn bool_test(b: bool) -> FieldTest {
    if b {
        FieldTest::Pass
    } else {
        FieldTest::Fail
    }
}

impl Query {
    pub fn from_decl(d: &Declaration) -> Option<Query> {
        let DeclBody::Query(q) = &d.body else { return None };
        Some(Query {
            slug: d.slug.clone(),
            name: d.name.clone(),
            resource_type: q.resource_type.clone(),
            ext_type: q.ext_type.clone(),
            filters: q.filters.clone(),
        })
    }

    fn admits(&self, r: &Resource, stats: &mut QueryStats) -> bool {
        if r.resource_type != self.resource_type {
            return false;
        }
        if self.ext_type.as_ref().is_some_and(|t| r.ext_type.as_ref() != Some(t)) {
            return false;
        }
        for f in &self.filters {
            let ok = match f {
                Filter::With { tag } => r.tags.contains(tag),
                Filter::Without { tag } => !r.tags.contains(tag),
                Filter::Field { name, op, value } => match field_test(r, name, *op, value) {
                    FieldTest::Pass => true,
                    FieldTest::Fail => false,
                    FieldTest::Missing => {
                        stats.unknown_field += 1;
                        false
                    }
                    FieldTest::Mismatch => {
                        stats.type_mismatch += 1;
                        false
                    }
                },
            };
            if !ok {
                return false;
            }
        }
        true
    }

    pub fn matches(&self, r: &Resource) -> bool {
        self.admits(r, &mut QueryStats::default())
    }

    /// The cohort as a set of resource ids.
    pub fn eval<'a>(&self, resources: impl IntoIterator<Item = &'a Resource>) -> (BTreeSet<String>, QueryStats) {
        let mut stats = QueryStats::default();
        let mut out = BTreeSet::new();
        for r in resources {
            stats.scanned += 1;
            if self.admits(r, &mut stats) {
                out.insert(r.id.clone());
            }
        }
        (out, stats)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub at: String,
    /// `null` for an average over nothing.
    pub value: Option<f64>,
    /// Values aggregated (the cohort size for counts).
    pub count: usize,
    /// Cohort members without a numeric aggregation field.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub slug: String,
    pub name: String,
    pub query: String,
    pub aggregation: Aggregation,
    pub field: Option<String>,
    pub schedule: Option<Interval>,
    #[serde(default)]
    pub samples: Vec<MetricSample>,
}

impl Metric {
    pub fn from_decl(d: &Declaration) -> Option<Metric> {
        let DeclBody::Metric(m) = &d.body else { return None };
        Some(Metric {
            slug: d.slug.clone(),
            name: d.name.clone(),
            query: m.query.clone(),
            aggregation: m.aggregation,
            field: m.field.clone(),
            schedule: m.schedule,
            samples: Vec::new(),
        })
    }

    /// Aggregates over the cohort of `q` and records the sample.
    pub fn compute(&mut self, q: &Query, resources: &Resources, at: &str) -> MetricSample {
        let (cohort, _) = q.eval(resources.iter());
        let sample = aggregate(self.aggregation, self.field.as_deref(), cohort.iter().filter_map(|id| resources.get(id)), at);
        self.samples.push(sample.clone());
        sample
    }

    /// Samples with `at` inside `[from, to)`; either bound may be open.
    pub fn window(&self, from: Option<&str>, to: Option<&str>) -> Vec<&MetricSample> {
        self.samples.iter().filter(|s| from.is_none_or(|f| s.at.as_str() >= f) && to.is_none_or(|t| s.at.as_str() < t)).collect()
    }
}

pub fn aggregate<'a>(agg: Aggregation, field: Option<&str>, members: impl Iterator<Item = &'a Resource>, at: &str) -> MetricSample {
    let mut count = 0usize;
    let mut skipped = 0usize;
    let mut sum = 0.0;
    for r in members {
        if agg == Aggregation::Count {
            count += 1;
            continue;
        }
        match field.and_then(|f| r.fields.get(f)).and_then(Value::as_f64) {
            Some(x) => {
                count += 1;
                sum += x;
            }
            None => skipped += 1,
        }
    }
    let value = match agg {
        Aggregation::Count => Some(count as f64),
        Aggregation::Sum => Some(sum),
        Aggregation::Avg => (count > 0).then(|| sum / count as f64),
    };
    MetricSample { at: at.to_string(), value, count, skipped }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub slug: String,
    pub name: String,
    pub active: bool,
    pub auto_start: bool,
    pub schedule: Option<Interval>,
    pub source_query: String,
    pub repeat: Option<Interval>,
    pub calls: String,
    #[serde(skip)]
    pub assignment: Vec<Assignment>,
    /// Resource id to the last successful fire (RFC 3339).
    #[serde(default)]
    pub fired: BTreeMap<String, String>,
}

/// One cohort member's outcome when a trigger fires.
#[derive(Debug, Clone, PartialEq)]
pub enum Planned {
    Start { resource: String, bindings: BTreeMap<String, Value>, subject: Value },
    /// Fired within the repeat window.
    Blocked { resource: String },
    Skipped { resource: String, error: CohortError },
}

impl Trigger {
    pub fn from_decl(d: &Declaration) -> Option<Trigger> {
        let DeclBody::Trigger(t) = &d.body else { return None };
        Some(Trigger {
            slug: d.slug.clone(),
            name: d.name.clone(),
            active: t.is_active(),
            auto_start: t.auto_starts(),
            schedule: t.schedule,
            source_query: t.source_query.clone(),
            repeat: t.repeat,
            calls: t.calls.clone(),
            assignment: t.assignment.clone(),
            fired: BTreeMap::new(),
        })
    }

    /// Whether the repeat window still covers `id` at `now`.
    pub fn blocked(&self, id: &str, now: DateTime<Utc>) -> bool {
        let (Some(r), Some(last)) = (self.repeat, self.fired.get(id)) else { return false };
        match crate::runtime::clock::parse_rfc3339(last) {
            Some(t) => now < add_interval(t, r),
            None => false,
        }
    }

    /// Decides, per cohort member, whether to start and with which lanes.
    pub fn plan(&self, q: &Query, resources: &Resources, now: DateTime<Utc>) -> Vec<Planned> {
        if !self.active {
            return Vec::new();
        }
        let (cohort, _) = q.eval(resources.iter());
        cohort
            .into_iter()
            .map(|id| {
                if self.blocked(&id, now) {
                    return Planned::Blocked { resource: id };
                }
                let r = resources.get(&id).expect("cohort members exist");
                match self.bindings(r, resources) {
                    Ok(bindings) => Planned::Start { resource: id, bindings, subject: r.to_value() },
                    Err(error) => Planned::Skipped { resource: id, error },
                }
            })
            .collect()
    }

    /// Lane bindings for one member.
    pub fn bindings(&self, r: &Resource, resources: &Resources) -> Result<BTreeMap<String, Value>, CohortError> {
        let subject = State(r.to_value().as_map().cloned().unwrap_or_default());
        let term = |t: &Term| match t {
            Term::Path(p) => subject.get(p).cloned(),
            Term::Lit(v) => Some(v.clone()),
        };
        let mut out = BTreeMap::new();
        for a in &self.assignment {
            let unresolved = || CohortError::AssignmentUnresolved { resource: r.id.clone(), lane: a.lane().to_string() };
            let contact = match a {
                Assignment::Contact { contact, .. } => {
                    let v = term(contact).ok_or_else(unresolved)?;
                    let id = resource_id(&v).ok_or_else(unresolved)?;
                    resources.get(id).ok_or_else(unresolved)?
                }
                Assignment::ContactByExtId { ext_id, .. } => {
                    let v = term(ext_id).filter(|v| !v.is_null()).ok_or_else(unresolved)?;
                    match resources.by_ext_id(&v)[..] {
                        [c] => c,
                        _ => return Err(unresolved()),
                    }
                }
            };
            out.insert(a.lane().to_string(), contact.contact_record());
        }
        Ok(out)
    }

    pub fn record_fire(&mut self, id: &str, at: &str) {
        self.fired.insert(id.to_string(), at.to_string());
    }
}

/// Calendar interval arithmetic in UTC.
pub fn add_interval(t: DateTime<Utc>, i: Interval) -> DateTime<Utc> {
    match i {
        Interval::Hourly => t + Duration::hours(1),
        Interval::Daily => t + Duration::days(1),
        Interval::Weekly => t + Duration::days(7),
        Interval::Monthly => t.checked_add_months(Months::new(1)).unwrap_or(t),
        Interval::Yearly => t.checked_add_months(Months::new(12)).unwrap_or(t),
    }
}

/// Start of the interval period containing `t` (weeks start Monday).
pub fn period_start(t: DateTime<Utc>, i: Interval) -> DateTime<Utc> {
    let day = Utc.with_ymd_and_hms(t.year(), t.month(), t.day(), 0, 0, 0).single().expect("valid date");
    match i {
        Interval::Hourly => day + Duration::hours(i64::from(t.hour())),
        Interval::Daily => day,
        Interval::Weekly => day - Duration::days(i64::from(t.weekday().num_days_from_monday())),
        Interval::Monthly => Utc.with_ymd_and_hms(t.year(), t.month(), 1, 0, 0, 0).single().expect("valid date"),
        Interval::Yearly => Utc.with_ymd_and_hms(t.year(), 1, 1, 0, 0, 0).single().expect("valid date"),
    }
}

/// A scheduled job runs on the first tick in each new period.
pub fn due(schedule: Interval, last_run: Option<DateTime<Utc>>, now: DateTime<Utc>) -> bool {
    last_run.is_none_or(|l| period_start(now, schedule) > period_start(l, schedule))
}

/// End-to-end success of `k` independent steps that each succeed with `p`.
pub fn compound_reliability(p: f64, k: i64) -> Result<f64, CohortError> {
    if !(0.0..=1.0).contains(&p) || k < 0 {
        return Err(CohortError::Domain { p: crate::value::format_number(p), k });
    }
    Ok(libm::pow(p, k as f64))
}

/// All queries, metrics and triggers in a set of declarations.
pub fn collect(decls: &[Declaration]) -> (Vec<Query>, Vec<Metric>, Vec<Trigger>) {
    (
        decls.iter().filter_map(Query::from_decl).collect(),
        decls.iter().filter_map(Metric::from_decl).collect(),
        decls.iter().filter_map(Trigger::from_decl).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(s: &str) -> DateTime<Utc> {
        crate::runtime::clock::parse_rfc3339(s).unwrap()
    }

    #[test]
    fn reliability() {
        assert!((compound_reliability(0.9, 10).unwrap() - 0.3487).abs() < 1e-4);
        assert_eq!(compound_reliability(1.0, 37).unwrap(), 1.0);
        assert_eq!(compound_reliability(0.5, 0).unwrap(), 1.0);
        assert!(compound_reliability(1.1, 2).is_err());
        assert!(compound_reliability(0.5, -1).is_err());
        assert!(compound_reliability(f64::NAN, 1).is_err());
    }

    #[test]
    fn periods() {
        let t = at("2025-03-05T13:45:00Z");
        assert_eq!(period_start(t, Interval::Daily), at("2025-03-05T00:00:00Z"));
        assert_eq!(period_start(t, Interval::Weekly), at("2025-03-03T00:00:00Z"));
        assert_eq!(period_start(t, Interval::Monthly), at("2025-03-01T00:00:00Z"));
        assert!(due(Interval::Daily, None, t));
        assert!(!due(Interval::Daily, Some(at("2025-03-05T00:00:01Z")), t));
        assert!(due(Interval::Daily, Some(at("2025-03-04T23:59:59Z")), t));
        assert_eq!(add_interval(at("2024-02-29T00:00:00Z"), Interval::Yearly), at("2025-02-28T00:00:00Z"));
    }
}
