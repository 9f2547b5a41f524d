use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{Diagram, Edge};
use crate::gfl::{cmp_node_ids, EdgeLabel};

/// A cycle as a closed edge sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleWitness(pub Vec<Edge>);

impl core::fmt::Display for CycleWitness {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fork {
    pub node: String,
    pub targets: Vec<String>,
}

#[derive(PartialEq, Eq)]
struct ById<'a>(&'a str);

impl Ord for ById<'_> {
    fn cmp(&self, o: &Self) -> Ordering {
        cmp_node_ids(self.0, o.0)
    }
}

impl PartialOrd for ById<'_> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Kahn's algorithm, always taking the smallest ready id. On a cycle,
/// returns one found by depth-first search from the smallest leftover node,
/// rotated to start at the edge that closes it.
pub fn topological_order(d: &Diagram) -> Result<Vec<String>, CycleWitness> {
    let mut indeg: BTreeMap<&str, usize> = d.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    for e in &d.edges {
        *indeg.get_mut(e.to.as_str()).expect("built diagrams have no dangling edges") += 1;
    }
    let mut ready: BTreeSet<ById<'_>> = indeg.iter().filter(|(_, &k)| k == 0).map(|(&n, _)| ById(n)).collect();
    let mut order = Vec::new();
    while let Some(ById(n)) = ready.pop_first() {
        order.push(String::from(n));
        for e in d.out_edges(n) {
            let k = indeg.get_mut(e.to.as_str()).expect("known node");
            *k -= 1;
            if *k == 0 {
                ready.insert(ById(&e.to));
            }
        }
    }
    if order.len() == d.nodes.len() {
        return Ok(order);
    }
    let mut left: Vec<&str> = indeg.iter().filter(|(_, &k)| k > 0).map(|(&n, _)| n).collect();
    left.sort_by(|a, b| cmp_node_ids(a, b));
    for start in left {
        if let Some(c) = cycle_from(d, start) {
            return Err(c);
        }
    }
    unreachable!("Kahn leftovers always contain a cycle")
}

fn cycle_from(d: &Diagram, start: &str) -> Option<CycleWitness> {
    // Iterative DFS keeping the current edge path.
    let mut path: Vec<&Edge> = Vec::new();
    let mut on_path: Vec<&str> = alloc::vec![start];
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<Vec<&Edge>> = alloc::vec![d.out_edges(start).collect::<Vec<_>>().into_iter().rev().collect()];
    while let Some(frame) = stack.last_mut() {
        let Some(e) = frame.pop() else {
            stack.pop();
            let n = on_path.pop().expect("frame per node");
            done.insert(n);
            path.pop();
            continue;
        };
        if let Some(i) = on_path.iter().position(|&n| n == e.to) {
            let mut cyc: Vec<Edge> = path[i..].iter().map(|&e| e.clone()).collect();
            cyc.push(e.clone());
            cyc.rotate_right(1);
            return Some(CycleWitness(cyc));
        }
        if done.contains(e.to.as_str()) {
            continue;
        }
        path.push(e);
        on_path.push(&e.to);
        stack.push(d.out_edges(&e.to).collect::<Vec<_>>().into_iter().rev().collect());
    }
    None
}

/// Nodes with more than one outgoing `to` edge.
pub fn detect_forks(d: &Diagram) -> Vec<Fork> {
    d.nodes
        .iter()
        .filter_map(|n| {
            let targets: Vec<String> = d.out_edges(&n.id).filter(|e| e.label == EdgeLabel::To).map(|e| e.to.clone()).collect();
            (targets.len() > 1).then(|| Fork { node: n.id.clone(), targets })
        })
        .collect()
}
