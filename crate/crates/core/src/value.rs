//! Runtime values, variable paths and workflow state.
//!
//! Values carry a distinct `Keyword` variant so that `:approved` and
//! `"approved"` stay distinguishable through serialization. In JSON a keyword
//! is encoded as a string with a single leading `:`; a string that itself
//! begins with `:` gets one extra `:` prepended, which keeps the encoding
//! bijective.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Number(f64),
    Str(String),
    Keyword(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn keyword(k: impl Into<String>) -> Self {
        Value::Keyword(k.into())
    }

    pub fn map<K: Into<String>>(entries: impl IntoIterator<Item = (K, Value)>) -> Self {
        Value::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.as_map().and_then(|m| m.get(key))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::Keyword(_) => "keyword",
            Value::List(_) => "list",
            Value::Map(_) => "map",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Null => J::Null,
            Value::Bool(b) => J::Bool(*b),
            Value::Number(n) => number_to_json(*n),
            Value::Str(s) => {
                if s.starts_with(':') {
                    J::String(alloc::format!(":{s}"))
                } else {
                    J::String(s.clone())
                }
            }
            Value::Keyword(k) => J::String(alloc::format!(":{k}")),
            Value::List(items) => J::Array(items.iter().map(Value::to_json).collect()),
            Value::Map(m) => J::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
        }
    }

    pub fn from_json(j: &serde_json::Value) -> Self {
        use serde_json::Value as J;
        match j {
            J::Null => Value::Null,
            J::Bool(b) => Value::Bool(*b),
            J::Number(n) => Value::Number(n.as_f64().unwrap_or(f64::NAN)),
            J::String(s) => {
                if let Some(rest) = s.strip_prefix("::") {
                    Value::Str(alloc::format!(":{rest}"))
                } else if let Some(k) = s.strip_prefix(':') {
                    Value::Keyword(k.to_owned())
                } else {
                    Value::Str(s.clone())
                }
            }
            J::Array(items) => Value::List(items.iter().map(Value::from_json).collect()),
            J::Object(m) => Value::Map(m.iter().map(|(k, v)| (k.clone(), Value::from_json(v))).collect()),
        }
    }

    /// Canonical single-line JSON text (sorted keys).
    pub fn to_canonical_string(&self) -> String {
        serde_json::to_string(&self.to_json()).unwrap_or_default()
    }
}

fn number_to_json(n: f64) -> serde_json::Value {
    if n.is_finite() && is_integral(n) && n.abs() < 9.0e15 {
        serde_json::Value::from(n as i64)
    } else {
        serde_json::Number::from_f64(n)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    }
}

pub(crate) fn is_integral(n: f64) -> bool {
    n.is_finite() && (n as i64) as f64 == n
}

/// Formats a number the way GFL source writes it: integers without a
/// fractional part, everything else in shortest round-trip form.
pub fn format_number(n: f64) -> String {
    if is_integral(n) && n.abs() < 9.0e15 {
        (n as i64).to_string()
    } else {
        alloc::format!("{n}")
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let j = serde_json::Value::deserialize(deserializer)?;
        Ok(Value::from_json(&j))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => f.write_str(&format_number(*n)),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Keyword(k) => write!(f, ":{k}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Value::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, ".{k}: {v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// A variable path such as `$.return.sum`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Path(Vec<String>);

impl Path {
    pub fn new(segments: Vec<String>) -> Option<Self> {
        if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
            None
        } else {
            Some(Path(segments))
        }
    }

    /// Parses `$.a.b` notation.
    pub fn parse(text: &str) -> Option<Self> {
        let rest = text.strip_prefix("$.")?;
        Path::new(rest.split('.').map(ToString::to_string).collect())
    }

    pub fn from_dotted(text: &str) -> Option<Self> {
        Path::new(text.split('.').map(ToString::to_string).collect())
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn first(&self) -> &str {
        &self.0[0]
    }

    pub fn child(&self, seg: &str) -> Path {
        let mut segs = self.0.clone();
        segs.push(seg.to_owned());
        Path(segs)
    }

    pub fn starts_with(&self, prefix: &Path) -> bool {
        self.0.len() >= prefix.0.len() && self.0[..prefix.0.len()] == prefix.0[..]
    }

    /// True when one path is a prefix of the other.
    pub fn overlaps(&self, other: &Path) -> bool {
        self.starts_with(other) || other.starts_with(self)
    }

    /// Replaces a leading `from` prefix by `to`.
    pub fn rebase(&self, from: &Path, to: &Path) -> Option<Path> {
        if !self.starts_with(from) {
            return None;
        }
        let mut segs = to.0.clone();
        segs.extend_from_slice(&self.0[from.0.len()..]);
        Some(Path(segs))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("$")?;
        for s in &self.0 {
            write!(f, ".{s}")?;
        }
        Ok(())
    }
}

impl From<Path> for String {
    fn from(p: Path) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Path {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Path::parse(&s).ok_or_else(|| alloc::format!("invalid path {s:?}"))
    }
}

/// Workflow state σ: a finite map from variables to values. Nested maps are
/// addressed through [`Path`]s; `$.return.*` lives under the `return` key.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub BTreeMap<String, Value>);

impl State {
    pub fn new() -> Self {
        State(BTreeMap::new())
    }

    pub fn get(&self, path: &Path) -> Option<&Value> {
        let mut segs = path.segments().iter();
        let mut cur = self.0.get(segs.next()?)?;
        for s in segs {
            cur = cur.as_map()?.get(s)?;
        }
        Some(cur)
    }

    pub fn set(&mut self, path: &Path, value: Value) {
        let segs = path.segments();
        let (last, init) = segs.split_last().expect("paths are nonempty");
        let mut map = &mut self.0;
        for s in init {
            let slot = map.entry(s.clone()).or_insert_with(|| Value::Map(BTreeMap::new()));
            if !matches!(slot, Value::Map(_)) {
                *slot = Value::Map(BTreeMap::new());
            }
            map = match slot {
                Value::Map(m) => m,
                _ => unreachable!(),
            };
        }
        map.insert(last.clone(), value);
    }

    pub fn remove(&mut self, path: &Path) -> Option<Value> {
        let segs = path.segments();
        let (last, init) = segs.split_last()?;
        let mut map = &mut self.0;
        for s in init {
            map = match map.get_mut(s)? {
                Value::Map(m) => m,
                _ => return None,
            };
        }
        map.remove(last)
    }

    pub fn to_value(&self) -> Value {
        Value::Map(self.0.clone())
    }

    pub fn canonical(&self) -> String {
        self.to_value().to_canonical_string()
    }
}
