//! Append-only per-run event streams, namespaced by workspace.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    RunStarted,
    NodeEntered,
    BoundaryOutcome,
    DecisionEvaluated,
    GuardChecked,
    GuardViolated,
    ListenerArmed,
    SignalReceived,
    TimerFired,
    NodeCompleted,
    RunCompleted,
    RunErrored,
    CheckpointTaken,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::RunCompleted | EventKind::RunErrored)
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::RunStarted => "RunStarted",
            EventKind::NodeEntered => "NodeEntered",
            EventKind::BoundaryOutcome => "BoundaryOutcome",
            EventKind::DecisionEvaluated => "DecisionEvaluated",
            EventKind::GuardChecked => "GuardChecked",
            EventKind::GuardViolated => "GuardViolated",
            EventKind::ListenerArmed => "ListenerArmed",
            EventKind::SignalReceived => "SignalReceived",
            EventKind::TimerFired => "TimerFired",
            EventKind::NodeCompleted => "NodeCompleted",
            EventKind::RunCompleted => "RunCompleted",
            EventKind::RunErrored => "RunErrored",
            EventKind::CheckpointTaken => "CheckpointTaken",
        }
    }
}

/// One log line. Field order is the on-disk schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub run_id: String,
    /// RFC 3339; recorded, never read by workflow logic.
    pub at: String,
    pub node_id: Option<String>,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub idempotency_key: Option<String>,
}

impl EventRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, StoreError> {
        serde_json::from_str(line).map_err(|e| StoreError::Corrupt(e.to_string()))
    }
}

/// An event before the store assigns its sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEvent {
    pub at: String,
    pub node_id: Option<String>,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub idempotency_key: Option<String>,
}

impl NewEvent {
    pub fn into_record(self, seq: u64, run_id: &str) -> EventRecord {
        EventRecord {
            seq,
            run_id: run_id.to_string(),
            at: self.at,
            node_id: self.node_id,
            kind: self.kind,
            payload: self.payload,
            idempotency_key: self.idempotency_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("run {0} is terminal")]
    TerminalRun(String),
    #[error("unknown workspace {0}")]
    WorkspaceUnknown(String),
    #[error("unknown run {0}")]
    RunUnknown(String),
    #[error("run {0} is locked by another writer")]
    Locked(String),
    #[error("corrupt log: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

pub trait EventStore {
    fn create_workspace(&mut self, ws: &str) -> Result<(), StoreError>;
    fn has_workspace(&self, ws: &str) -> bool;
    /// Appends and returns the assigned seq (previous + 1). Durable on return.
    fn append(&mut self, ws: &str, run_id: &str, ev: NewEvent) -> Result<u64, StoreError>;
    /// Records with `seq >= from_seq`, in order.
    fn read(&self, ws: &str, run_id: &str, from_seq: u64) -> Result<Vec<EventRecord>, StoreError>;
    fn run_ids(&self, ws: &str) -> Result<Vec<String>, StoreError>;
    /// Makes batched appends durable; a no-op for stores that sync each append.
    fn flush(&mut self) -> Result<(), StoreError> {
        Ok(())
    }
}

/// Shared append rule: no events after a terminal one, except checkpoints.
pub fn check_append(last_seq: u64, closed: bool, run_id: &str, ev: &NewEvent) -> Result<u64, StoreError> {
    if closed && ev.kind != EventKind::CheckpointTaken {
        return Err(StoreError::TerminalRun(run_id.to_string()));
    }
    Ok(last_seq + 1)
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    workspaces: BTreeMap<String, BTreeMap<String, Vec<EventRecord>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl EventStore for MemoryStore {
    fn create_workspace(&mut self, ws: &str) -> Result<(), StoreError> {
        self.workspaces.entry(ws.to_string()).or_default();
        Ok(())
    }

    fn has_workspace(&self, ws: &str) -> bool {
        self.workspaces.contains_key(ws)
    }

    fn append(&mut self, ws: &str, run_id: &str, ev: NewEvent) -> Result<u64, StoreError> {
        let runs = self.workspaces.get_mut(ws).ok_or_else(|| StoreError::WorkspaceUnknown(ws.to_string()))?;
        let stream = runs.entry(run_id.to_string()).or_default();
        let closed = stream.iter().rev().any(|r| r.kind.is_terminal());
        let seq = check_append(stream.last().map_or(0, |r| r.seq), closed, run_id, &ev)?;
        stream.push(ev.into_record(seq, run_id));
        Ok(seq)
    }

    fn read(&self, ws: &str, run_id: &str, from_seq: u64) -> Result<Vec<EventRecord>, StoreError> {
        let runs = self.workspaces.get(ws).ok_or_else(|| StoreError::WorkspaceUnknown(ws.to_string()))?;
        let stream = runs.get(run_id).ok_or_else(|| StoreError::RunUnknown(run_id.to_string()))?;
        Ok(stream.iter().filter(|r| r.seq >= from_seq).cloned().collect())
    }

    fn run_ids(&self, ws: &str) -> Result<Vec<String>, StoreError> {
        let runs = self.workspaces.get(ws).ok_or_else(|| StoreError::WorkspaceUnknown(ws.to_string()))?;
        Ok(runs.keys().cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ev(kind: EventKind) -> NewEvent {
        NewEvent { at: "2025-01-01T00:00:00Z".into(), node_id: None, kind, payload: json!({"k": 1}), idempotency_key: None }
    }

    #[test]
    fn dense_seqs_and_terminal_rule() {
        let mut s = MemoryStore::new();
        s.create_workspace("w").unwrap();
        assert_eq!(s.append("w", "r", ev(EventKind::RunStarted)), Ok(1));
        assert_eq!(s.append("w", "r", ev(EventKind::NodeEntered)), Ok(2));
        assert_eq!(s.append("w", "r", ev(EventKind::RunCompleted)), Ok(3));
        assert_eq!(s.append("w", "r", ev(EventKind::NodeEntered)), Err(StoreError::TerminalRun("r".into())));
        assert_eq!(s.append("w", "r", ev(EventKind::CheckpointTaken)), Ok(4));
        assert_eq!(s.read("w", "r", 3).unwrap().len(), 2);
        assert_eq!(s.read("w", "r", 3).unwrap()[0].seq, 3);
    }

    #[test]
    fn workspaces_are_isolated() {
        let mut s = MemoryStore::new();
        s.create_workspace("a").unwrap();
        s.create_workspace("b").unwrap();
        s.append("a", "r1", ev(EventKind::RunStarted)).unwrap();
        assert_eq!(s.read("b", "r1", 1), Err(StoreError::RunUnknown("r1".into())));
        assert_eq!(s.append("c", "r1", ev(EventKind::RunStarted)), Err(StoreError::WorkspaceUnknown("c".into())));
    }

    #[test]
    fn record_line_field_order() {
        let r = ev(EventKind::RunStarted).into_record(1, "r");
        let line = r.to_line();
        assert!(line.starts_with("{\"seq\":1,\"run_id\":\"r\",\"at\":"), "{line}");
        assert!(line.ends_with("\"idempotency_key\":null}"), "{line}");
        assert_eq!(EventRecord::from_line(&line).unwrap(), r);
    }
}
