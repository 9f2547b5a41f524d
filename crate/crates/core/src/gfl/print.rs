//! Canonical GFL text for declarations.

use alloc::string::{String, ToString};

use super::ast::*;
use super::sexpr::{write_string, Expr};
use crate::predicate::{Predicate, PropertyClaim};
use crate::value::format_number;

struct W {
    out: String,
}

impl W {
    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push(' ');
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn kv_expr(&mut self, indent: usize, key: &str, e: &Expr) {
        let mut s = String::new();
        for _ in 0..indent {
            s.push(' ');
        }
        s.push_str(key);
        s.push_str(": ");
        e.write_to(&mut s, indent);
        s.push('\n');
        self.out.push_str(&s);
    }

    fn text(&mut self, indent: usize, key: &str, text: &str) {
        if text.contains('\n') && literal_safe(text) {
            self.line(indent, &alloc::format!("{key}: |"));
            for l in text.split('\n') {
                if l.is_empty() {
                    self.out.push('\n');
                } else {
                    self.line(indent + 2, l);
                }
            }
        } else {
            self.kv_expr(indent, key, &Expr::Str(text.to_string()));
        }
    }

    fn preds(&mut self, indent: usize, key: &str, ps: &[Predicate]) {
        if ps.is_empty() {
            return;
        }
        self.line(indent, &alloc::format!("{key}:"));
        for p in ps {
            self.dash_expr(indent + 2, &p.to_expr());
        }
    }

    fn claims(&mut self, indent: usize, cs: &[PropertyClaim]) {
        if cs.is_empty() {
            return;
        }
        self.line(indent, "properties:");
        for c in cs {
            self.dash_expr(indent + 2, &c.to_expr());
        }
    }

    fn dash_expr(&mut self, indent: usize, e: &Expr) {
        let mut s = String::new();
        for _ in 0..indent {
            s.push(' ');
        }
        s.push_str("- ");
        e.write_to(&mut s, indent);
        s.push('\n');
        self.out.push_str(&s);
    }

    fn map(&mut self, indent: usize, key: &str, m: &[(alloc::string::String, Expr)]) {
        self.kv_expr(indent, key, &Expr::Map(m.to_vec()));
    }

    fn interval(&mut self, indent: usize, key: &str, i: Interval) {
        self.line(indent, &alloc::format!("{key}:"));
        self.line(indent + 2, &alloc::format!("interval: :{}", i.name()));
    }
}

/// Whether a `|` block reproduces `text` exactly after dedent and trimming.
fn literal_safe(text: &str) -> bool {
    let lines: alloc::vec::Vec<&str> = text.split('\n').collect();
    let nonblank = lines.iter().filter(|l| !l.is_empty());
    let min_indent = nonblank.clone().map(|l| l.len() - l.trim_start_matches(' ').len()).min();
    min_indent == Some(0)
        && lines.iter().all(|l| l.trim_end() == *l && !l.contains(['\t', '\r']) && (l.is_empty() || !l.trim().is_empty()))
        && !text.ends_with('\n')
}

fn quoted(s: &str) -> String {
    let mut out = String::new();
    write_string(&mut out, s);
    out
}

pub fn serialize(decl: &Declaration) -> String {
    let mut w = W { out: String::new() };
    let mut header = String::from(decl.kind().name());
    if let Some(r) = &decl.role {
        header.push_str(&alloc::format!(" [{r}]"));
    }
    if decl.slug != slugify(&decl.name) {
        header.push_str(&alloc::format!(" :{}", decl.slug));
    }
    header.push(' ');
    header.push_str(&quoted(&decl.name));
    header.push(':');
    w.line(0, &header);
    match &decl.body {
        DeclBody::Diagram(d) => diagram(&mut w, d),
        DeclBody::Query(q) => query(&mut w, q),
        DeclBody::Metric(m) => metric(&mut w, m),
        DeclBody::Trigger(t) => trigger(&mut w, t),
    }
    w.out
}

fn diagram(w: &mut W, d: &DiagramDecl) {
    if let Some(t) = &d.description {
        w.text(2, "description", t);
    }
    if !d.swimlanes.is_empty() {
        w.line(2, "swimlanes:");
        for lane in &d.swimlanes {
            if lane.attrs.is_empty() {
                w.line(4, &alloc::format!("- {}", quoted(&lane.name)));
            } else {
                w.line(4, &alloc::format!("- {}:", quoted(&lane.name)));
                for (k, v) in &lane.attrs {
                    w.kv_expr(6, k, v);
                }
            }
        }
    }
    if !d.inputs.is_empty() {
        w.map(2, "inputs", &d.inputs);
    }
    if !d.outputs.is_empty() {
        w.map(2, "outputs", &d.outputs);
    }
    w.preds(2, "requires", &d.requires);
    w.preds(2, "ensures", &d.ensures);
    w.claims(2, &d.properties);
    if !d.variables.is_empty() {
        w.line(2, "variables:");
        for (p, v) in &d.variables {
            w.kv_expr(4, &p.to_string(), v);
        }
    }
    if !d.nodes.is_empty() {
        w.line(2, "model:");
        for n in &d.nodes {
            node(w, n);
        }
    }
}

fn node(w: &mut W, n: &NodeDecl) {
    let mut h = alloc::format!("{}. [{}] {} @{}", n.id, n.node_type.name(), quoted(&n.label), n.lane);
    for e in &n.edges {
        match e.label {
            EdgeLabel::To => h.push_str(&alloc::format!(" --> {}", e.target)),
            l => h.push_str(&alloc::format!(" :{}--> {}", l.name(), e.target)),
        }
    }
    h.push(':');
    w.line(4, &h);
    let ind = 6;
    if let Some(a) = &n.assigned {
        let items = a.iter().map(|k| Expr::Keyword(k.clone())).collect();
        w.kv_expr(ind, "assigned", &Expr::List(items));
    }
    if let Some(t) = &n.description {
        w.text(ind, "description", t);
    }
    if let Some(t) = &n.ext_type {
        w.kv_expr(ind, "ext-type", &Expr::Str(t.clone()));
    }
    if let Some(p) = &n.requires {
        w.kv_expr(ind, "requires", &p.to_expr());
    }
    if let Some(s) = &n.subdiagram {
        w.kv_expr(ind, "subdiagram", &Expr::Keyword(s.clone()));
    }
    if let Some(p) = &n.iterate {
        w.kv_expr(ind, "iterate", &Expr::Path(p.clone()));
    }
    if let Some(a) = &n.action {
        w.line(ind, "action:");
        w.kv_expr(ind + 2, "calls", &a.calls);
        if let Some(p) = &a.assigns {
            w.kv_expr(ind + 2, "assigns", &Expr::Path(p.clone()));
        }
        if let Some(p) = &a.requires {
            w.kv_expr(ind + 2, "requires", &p.to_expr());
        }
        if let Some(p) = &a.ensures {
            w.kv_expr(ind + 2, "ensures", &p.to_expr());
        }
    }
    if let Some(p) = &n.ensures {
        w.kv_expr(ind, "ensures", &p.to_expr());
    }
    w.claims(ind, &n.properties);
    if let Some((x, y)) = n.layout {
        w.line(ind, &alloc::format!("layout: {{ .x: {} .y: {} }}", format_number(x), format_number(y)));
    }
    if let Some((c, t)) = n.weight {
        w.line(ind, &alloc::format!("weight: {{ .cost: {} .time: {} }}", format_number(c), format_number(t)));
    }
}

fn query(w: &mut W, q: &QueryDecl) {
    if let Some(t) = &q.description {
        w.text(2, "description", t);
    }
    w.line(2, &alloc::format!("resource-type: :{}", q.resource_type));
    if let Some(t) = &q.ext_type {
        w.kv_expr(2, "ext-type", &Expr::Str(t.clone()));
    }
    if !q.filters.is_empty() {
        w.line(2, "filters:");
        for f in &q.filters {
            match f {
                Filter::With { tag } => w.line(4, &alloc::format!("- with: :{tag}")),
                Filter::Without { tag } => w.line(4, &alloc::format!("- without: :{tag}")),
                Filter::Field { name, op, value } => {
                    w.line(4, &alloc::format!("- field: :{name}"));
                    w.line(6, &alloc::format!("operator: :{}", op.name()));
                    w.kv_expr(6, "value", &Expr::from_literal(value));
                }
            }
        }
    }
}

fn metric(w: &mut W, m: &MetricDecl) {
    if let Some(t) = &m.description {
        w.text(2, "description", t);
    }
    w.line(2, &alloc::format!("query: :{}", m.query));
    w.line(2, &alloc::format!("aggregation: :{}", m.aggregation.name()));
    if let Some(f) = &m.field {
        w.line(2, &alloc::format!("field: :{f}"));
    }
    if let Some(i) = m.schedule {
        w.interval(2, "schedule", i);
    }
}

fn trigger(w: &mut W, t: &TriggerDecl) {
    if let Some(k) = &t.trigger_type {
        w.line(2, &alloc::format!("trigger-type: :{k}"));
    }
    if let Some(d) = &t.description {
        w.text(2, "description", d);
    }
    if let Some(b) = t.active {
        w.line(2, &alloc::format!("active: {b}"));
    }
    if let Some(b) = t.auto_start {
        w.line(2, &alloc::format!("auto-start: {b}"));
    }
    if let Some(i) = t.schedule {
        w.interval(2, "schedule", i);
    }
    w.line(2, "source:");
    w.line(4, &alloc::format!("query: :{}", t.source_query));
    if let Some(i) = t.repeat {
        w.interval(2, "repeat", i);
    }
    w.line(2, &alloc::format!("calls: :{}", t.calls));
    if !t.assignment.is_empty() {
        w.line(2, "assignment:");
        for a in &t.assignment {
            let (head, key, lane, term) = match a {
                Assignment::Contact { lane, contact } => ("assign-swimlane-contact", "contactId", lane, contact),
                Assignment::ContactByExtId { lane, ext_id } => ("assign-swimlane-contact-by-ext-id", "extId", lane, ext_id),
            };
            let e = Expr::Call {
                head: head.into(),
                args: alloc::vec![Expr::Map(alloc::vec![
                    ("swimlane".into(), Expr::Keyword(lane.clone())),
                    (key.into(), term.to_expr()),
                ])],
            };
            w.dash_expr(4, &e);
        }
    }
}
