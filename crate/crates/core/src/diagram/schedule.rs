use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Diagram;
use crate::gfl::cmp_node_ids;

/// Sequential execution order for one diagram frame.
///
/// Activated nodes wait in `active`. The next node is the smallest id that is
/// not reachable from another activated node, so a join runs once, after
/// every activated predecessor. When every candidate is reachable from
/// another (activated nodes on a common cycle) the smallest id runs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub active: Vec<String>,
    pub visits: BTreeMap<String, u32>,
}

impl Schedule {
    /// Starts at the entry nodes. A frame where every node has a
    /// predecessor (a closed cycle) starts at its first declared node.
    pub fn start(d: &Diagram) -> Self {
        let mut active: Vec<String> = d.entries().into_iter().map(String::from).collect();
        if active.is_empty() {
            active.extend(d.nodes.first().map(|n| n.id.clone()));
        }
        Schedule { active, visits: BTreeMap::new() }
    }

    pub fn pick(&self, d: &Diagram) -> Option<String> {
        let blocked = |c: &String| self.active.iter().any(|a| a != c && d.reaches(a, c));
        self.active.iter().find(|c| !blocked(c)).or_else(|| self.active.first()).cloned()
    }

    /// Marks `id` as entered and returns its 1-based visit number.
    pub fn enter(&mut self, id: &str) -> u32 {
        let v = self.visits.entry(String::from(id)).or_insert(0);
        *v += 1;
        *v
    }

    pub fn complete(&mut self, id: &str, next: &[String]) {
        self.active.retain(|a| a != id);
        for n in next {
            if !self.active.contains(n) {
                self.active.push(n.clone());
            }
        }
        self.active.sort_by(|a, b| cmp_node_ids(a, b));
    }

    pub fn is_done(&self) -> bool {
        self.active.is_empty()
    }
}
