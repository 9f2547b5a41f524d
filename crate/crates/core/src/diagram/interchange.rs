//! Graph-interchange form of a diagram for the dashboard:
//!
//! ```text
//! { slug, name, content_hash, core_lanes: [key],
//!   lanes: [{ key, name, core }],
//!   nodes: [{ id, type, label, lane, assigned, callee, requires, ensures, description, ext_type }],
//!   edges: [{ from, label, to }],
//!   order: [id] | null }
//! ```
//!
//! `order` is the topological order, or null for cyclic diagrams.

use alloc::string::ToString;
use alloc::vec::Vec;

use serde_json::{json, Value as Json};

use super::{topological_order, Diagram};

pub fn export(d: &Diagram) -> Json {
    let lanes: Vec<Json> = d.lanes.iter().map(|l| json!({"key": l.key, "name": l.name, "core": l.core})).collect();
    let nodes: Vec<Json> = d
        .nodes
        .iter()
        .map(|n| {
            let reqs: Vec<_> = n.all_requires().iter().map(|p| p.to_string()).collect();
            let ens: Vec<_> = n.all_ensures().iter().map(|p| p.to_string()).collect();
            json!({
                "id": n.id,
                "type": n.node_type.name(),
                "label": n.label,
                "lane": n.lane,
                "assigned": n.assigned,
                "callee": n.callee(),
                "requires": reqs,
                "ensures": ens,
                "description": n.description,
                "ext_type": n.ext_type,
            })
        })
        .collect();
    let edges: Vec<Json> =
        d.edges.iter().map(|e| json!({"from": e.from, "label": e.label.name(), "to": e.to})).collect();
    json!({
        "slug": d.slug,
        "name": d.name,
        "content_hash": d.content_hash,
        "core_lanes": d.core_lanes().into_iter().collect::<Vec<_>>(),
        "lanes": lanes,
        "nodes": nodes,
        "edges": edges,
        "order": topological_order(d).ok(),
    })
}
