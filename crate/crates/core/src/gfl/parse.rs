use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::lines::{layout, Line};
use super::sexpr::{is_word_char, parse_expr, Expr};
use super::ParseError;
use crate::predicate::{CmpOp, Predicate, PropertyClaim, Term};
use crate::value::Path;

/// One `key: value` line, with the value text located in the source.
struct Entry<'a> {
    key: String,
    rest: &'a str,
    rest_col: usize,
    line: &'a Line,
}

impl Entry<'_> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(msg, self.line.line, self.line.col(), self.key.clone())
    }

    fn has_inline(&self) -> bool {
        !self.rest.is_empty()
    }

    fn expr(&self) -> Result<Expr, ParseError> {
        if self.rest.is_empty() {
            return Err(self.err(alloc::format!("`{}` needs a value", self.key)));
        }
        if !self.line.children.is_empty() {
            return Err(nested_err(&self.line.children[0]));
        }
        parse_expr(self.rest, self.line.line, self.rest_col)
    }

    fn keyword(&self) -> Result<String, ParseError> {
        match self.expr()? {
            Expr::Keyword(k) => Ok(k),
            other => Err(self.value_err("a keyword", &other)),
        }
    }

    fn string(&self) -> Result<String, ParseError> {
        match self.expr()? {
            Expr::Str(s) => Ok(s),
            other => Err(self.value_err("a string", &other)),
        }
    }

    fn bool(&self) -> Result<bool, ParseError> {
        match self.expr()? {
            Expr::Bool(b) => Ok(b),
            other => Err(self.value_err("true or false", &other)),
        }
    }

    fn path(&self) -> Result<Path, ParseError> {
        match self.expr()? {
            Expr::Path(p) => Ok(p),
            other => Err(self.value_err("a variable path", &other)),
        }
    }

    /// `description: |` literal, or a quoted string.
    fn text(&self) -> Result<String, ParseError> {
        match &self.line.literal {
            Some(t) => Ok(t.clone()),
            None => self.string(),
        }
    }

    fn predicate(&self) -> Result<Predicate, ParseError> {
        let e = self.expr()?;
        Predicate::from_expr(&e).map_err(|m| ParseError::new(m, self.line.line, self.rest_col, e.to_text()))
    }

    fn value_err(&self, want: &str, got: &Expr) -> ParseError {
        ParseError::new(alloc::format!("`{}` expects {want}", self.key), self.line.line, self.rest_col, got.to_text())
    }

    fn map(&self) -> Result<Vec<(String, Expr)>, ParseError> {
        match self.expr()? {
            Expr::Map(m) => Ok(m),
            other => Err(self.value_err("a { .key: value } map", &other)),
        }
    }

    fn block(&self) -> Result<&[Line], ParseError> {
        if self.has_inline() {
            return Err(ParseError::new(
                alloc::format!("`{}` opens a block; value goes on the following lines", self.key),
                self.line.line,
                self.rest_col,
                self.rest,
            ));
        }
        Ok(&self.line.children)
    }

    /// An inline single expression, or a block of `- expr` items.
    fn expr_list(&self) -> Result<Vec<(Expr, usize, usize)>, ParseError> {
        if self.has_inline() {
            return Ok(alloc::vec![(self.expr()?, self.line.line, self.rest_col)]);
        }
        let mut out = Vec::new();
        for l in &self.line.children {
            let (text, col) = dash_item(l)?;
            if !l.children.is_empty() {
                return Err(nested_err(&l.children[0]));
            }
            out.push((parse_expr(text, l.line, col)?, l.line, col));
        }
        Ok(out)
    }

    fn predicates(&self) -> Result<Vec<Predicate>, ParseError> {
        self.expr_list()?
            .into_iter()
            .map(|(e, line, col)| Predicate::from_expr(&e).map_err(|m| ParseError::new(m, line, col, e.to_text())))
            .collect()
    }

    fn claims(&self) -> Result<Vec<PropertyClaim>, ParseError> {
        self.expr_list()?
            .into_iter()
            .map(|(e, line, col)| PropertyClaim::from_expr(&e).map_err(|m| ParseError::new(m, line, col, e.to_text())))
            .collect()
    }

    fn interval_block(&self) -> Result<Interval, ParseError> {
        let mut interval = None;
        for e in entries(self.block()?)? {
            match e.key.as_str() {
                "interval" => {
                    let k = e.keyword()?;
                    interval = Some(Interval::from_name(&k).ok_or_else(|| e.err(alloc::format!("unknown interval :{k}")))?);
                }
                _ => return Err(unknown_key(&e)),
            }
        }
        interval.ok_or_else(|| self.err("missing `interval:`"))
    }
}

fn nested_err(l: &Line) -> ParseError {
    ParseError::new("unexpected nested block", l.line, l.col(), l.text.lines().next().unwrap_or(""))
}

fn unknown_key(e: &Entry<'_>) -> ParseError {
    ParseError::new(alloc::format!("unknown key `{}`", e.key), e.line.line, e.line.col(), e.key.clone())
}

fn missing(line: &Line, key: &str) -> ParseError {
    ParseError::new(alloc::format!("missing `{key}:`"), line.line, line.col(), line.text.lines().next().unwrap_or(""))
}

fn dash_item(l: &Line) -> Result<(&str, usize), ParseError> {
    if l.text == "-" {
        return Ok(("", l.col() + 1));
    }
    match l.text.strip_prefix("- ") {
        Some(rest) => {
            let trimmed = rest.trim_start();
            Ok((trimmed, l.col() + 2 + (rest.len() - trimmed.len())))
        }
        None => Err(ParseError::new("expected a `- ` list item", l.line, l.col(), l.text.lines().next().unwrap_or(""))),
    }
}

/// Splits `key: rest`. Keys are bare words or `$.paths`.
fn split_key(text: &str) -> Option<(&str, &str, usize)> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '$' | '.') {
            i += 1;
        } else {
            break;
        }
    }
    if i == 0 || i >= bytes.len() || bytes[i] != b':' {
        return None;
    }
    let key = &text[..i];
    let after = &text[i + 1..];
    if !after.is_empty() && !after.starts_with([' ', '\n']) {
        return None;
    }
    let rest = after.trim_start_matches(' ');
    let rest_off = i + 1 + (after.len() - rest.len());
    Some((key, rest.trim_end(), rest_off))
}

fn entry(l: &Line) -> Result<Entry<'_>, ParseError> {
    let (key, rest, off) = split_key(&l.text)
        .ok_or_else(|| ParseError::new("expected `key: value`", l.line, l.col(), l.text.lines().next().unwrap_or("")))?;
    Ok(Entry { key: key.to_string(), rest, rest_col: l.col() + off, line: l })
}

fn entries(lines: &[Line]) -> Result<Vec<Entry<'_>>, ParseError> {
    let mut out: Vec<Entry<'_>> = Vec::new();
    for l in lines {
        let e = entry(l)?;
        if out.iter().any(|o| o.key == e.key) {
            return Err(ParseError::new(alloc::format!("duplicate key `{}`", e.key), l.line, l.col(), e.key));
        }
        out.push(e);
    }
    Ok(out)
}

/// Character cursor over a header line.
struct Cursor<'a> {
    s: &'a str,
    pos: usize,
    line: usize,
    col0: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn col(&self) -> usize {
        self.col0 + self.s[..self.pos].chars().count()
    }

    fn err(&self, msg: &str) -> ParseError {
        let ctx: String = self.rest().chars().take_while(|c| !c.is_whitespace()).collect();
        ParseError::new(msg, self.line, self.col(), if ctx.is_empty() { "<end of line>".into() } else { ctx })
    }

    fn skip_ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start().len();
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn word(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let r = self.rest();
        let n = r.char_indices().find(|(_, c)| !f(*c)).map(|(i, _)| i).unwrap_or(r.len());
        self.pos += n;
        &r[..n]
    }

    fn string(&mut self) -> Result<String, ParseError> {
        if !self.rest().starts_with('"') {
            return Err(self.err("expected a quoted string"));
        }
        let start = self.pos;
        let mut end = None;
        let mut escaped = false;
        for (i, c) in self.rest().char_indices().skip(1) {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                end = Some(self.pos + i + 1);
                break;
            }
        }
        let end = end.ok_or_else(|| self.err("unterminated string"))?;
        let col = self.col();
        match parse_expr(&self.s[start..end], self.line, col)? {
            Expr::Str(s) => {
                self.pos = end;
                Ok(s)
            }
            _ => Err(self.err("expected a quoted string")),
        }
    }
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn is_lane_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '_'
}

fn parse_decl_header(l: &Line) -> Result<(DeclKind, Option<String>, Option<String>, String), ParseError> {
    let mut c = Cursor { s: &l.text, pos: 0, line: l.line, col0: l.col() };
    let kw = c.word(|c| c.is_ascii_alphanumeric() || c == '-');
    let kind = match kw {
        "diagram" => DeclKind::Diagram,
        "query" => DeclKind::Query,
        "metric" => DeclKind::Metric,
        "trigger" => DeclKind::Trigger,
        _ => {
            return Err(ParseError::new(
                "unknown construct; expected diagram, query, metric or trigger",
                l.line,
                l.col(),
                String::from(if kw.is_empty() { l.text.lines().next().unwrap_or("") } else { kw }),
            ))
        }
    };
    c.skip_ws();
    let mut role = None;
    if c.eat("[") {
        let r = c.word(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_');
        if r.is_empty() || !c.eat("]") {
            return Err(c.err("malformed [role] annotation"));
        }
        role = Some(r.to_string());
        c.skip_ws();
    }
    let mut slug = None;
    if c.rest().starts_with(':') {
        c.pos += 1;
        let s = c.word(is_word_char);
        if s.is_empty() {
            return Err(c.err("malformed :slug"));
        }
        slug = Some(s.to_string());
        c.skip_ws();
    }
    let name = c.string()?;
    if name.trim().is_empty() {
        return Err(ParseError::new("declaration name is empty", l.line, l.col(), l.text.clone()));
    }
    c.skip_ws();
    if !c.eat(":") {
        return Err(c.err("declaration header must end with `:`"));
    }
    c.skip_ws();
    if !c.rest().is_empty() {
        return Err(c.err("unexpected text after declaration header"));
    }
    Ok((kind, role, slug, name))
}

pub(crate) fn parse_text(text: &str) -> Result<Vec<Declaration>, ParseError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let tree = layout(text)?;
    let mut out: Vec<Declaration> = Vec::new();
    for top in &tree {
        if top.literal.is_some() {
            return Err(ParseError::new("unexpected literal block at top level", top.line, top.col(), top.text.clone()));
        }
        let (kind, role, slug, name) = parse_decl_header(top)?;
        let slug = slug.unwrap_or_else(|| slugify(&name));
        if slug.is_empty() {
            return Err(ParseError::new("cannot derive a slug from the name", top.line, top.col(), name));
        }
        let body = match kind {
            DeclKind::Diagram => DeclBody::Diagram(diagram_body(top)?),
            DeclKind::Query => DeclBody::Query(query_body(top)?),
            DeclKind::Metric => DeclBody::Metric(metric_body(top)?),
            DeclKind::Trigger => DeclBody::Trigger(trigger_body(top)?),
        };
        if role.is_some() && kind != DeclKind::Diagram {
            return Err(ParseError::new("[role] annotations apply to diagrams only", top.line, top.col(), name));
        }
        if out.iter().any(|d| d.kind() == kind && d.slug == slug) {
            return Err(ParseError::new(alloc::format!("duplicate {} slug `{slug}`", kind.name()), top.line, top.col(), name));
        }
        out.push(Declaration { name, slug, role, body });
    }
    Ok(out)
}

fn diagram_body(top: &Line) -> Result<DiagramDecl, ParseError> {
    let mut d = DiagramDecl::default();
    for e in entries(&top.children)? {
        match e.key.as_str() {
            "description" => d.description = Some(e.text()?),
            "swimlanes" => {
                for l in e.block()? {
                    let (text, col) = dash_item(l)?;
                    let mut c = Cursor { s: text, pos: 0, line: l.line, col0: col };
                    let name = c.string()?;
                    let headed = c.eat(":");
                    if !c.rest().trim().is_empty() {
                        return Err(c.err("unexpected text after lane name"));
                    }
                    let mut attrs = Vec::new();
                    if !headed && !l.children.is_empty() {
                        return Err(nested_err(&l.children[0]));
                    }
                    for a in entries(&l.children)? {
                        attrs.push((a.key.clone(), a.expr()?));
                    }
                    d.swimlanes.push(LaneDecl { name, attrs });
                }
            }
            "inputs" => d.inputs = e.map()?,
            "outputs" => d.outputs = e.map()?,
            "requires" => d.requires = e.predicates()?,
            "ensures" => d.ensures = e.predicates()?,
            "properties" => d.properties = e.claims()?,
            "variables" => {
                for v in entries(e.block()?)? {
                    let path = Path::parse(&v.key).ok_or_else(|| v.err("variable names are $.paths"))?;
                    d.variables.push((path, v.expr()?));
                }
            }
            "model" => {
                for l in e.block()? {
                    let n = node(l)?;
                    if d.nodes.iter().any(|o| o.id == n.id) {
                        return Err(ParseError::new(alloc::format!("duplicate node id `{}`", n.id), l.line, l.col(), n.id));
                    }
                    d.nodes.push(n);
                }
            }
            _ => return Err(unknown_key(&e)),
        }
    }
    Ok(d)
}

fn node(l: &Line) -> Result<NodeDecl, ParseError> {
    let mut c = Cursor { s: &l.text, pos: 0, line: l.line, col0: l.col() };
    let id = c.word(is_id_char).to_string();
    if id.is_empty() || !c.eat(".") {
        return Err(c.err("expected a node line `<id>. [<type>] \"<label>\" @<lane>`"));
    }
    c.skip_ws();
    if !c.eat("[") {
        return Err(c.err("expected [node-type]"));
    }
    let ty_col = c.col();
    let ty = c.word(|ch| ch.is_ascii_alphanumeric() || ch == '-');
    let node_type = NodeType::from_name(ty).ok_or_else(|| ParseError::new("unknown node type", l.line, ty_col, ty))?;
    if !c.eat("]") {
        return Err(c.err("expected `]`"));
    }
    c.skip_ws();
    let label = c.string()?;
    c.skip_ws();
    if !c.eat("@") {
        return Err(c.err("expected @lane"));
    }
    let lane = c.word(is_lane_char).to_string();
    if lane.is_empty() {
        return Err(c.err("expected a lane name after @"));
    }
    let mut n = NodeDecl::new(&id, node_type, &label, &lane);
    loop {
        c.skip_ws();
        if c.rest() == ":" {
            break;
        }
        let label = if c.rest().starts_with(':') {
            let save = c.pos;
            c.pos += 1;
            let w = c.word(|ch| ch.is_ascii_alphanumeric());
            match EdgeLabel::from_name(w) {
                Some(EdgeLabel::To) | None => {
                    c.pos = save;
                    return Err(c.err("unknown edge label"));
                }
                Some(lbl) => lbl,
            }
        } else {
            EdgeLabel::To
        };
        c.skip_ws();
        if !c.eat("-->") {
            return Err(c.err(if c.rest().is_empty() { "node line must end with `:`" } else { "expected `-->`" }));
        }
        c.skip_ws();
        let target = c.word(is_id_char);
        if target.is_empty() {
            return Err(c.err("expected a target node id"));
        }
        n.edges.push(EdgeDecl { label, target: target.to_string() });
    }
    for e in entries(&l.children)? {
        match e.key.as_str() {
            "assigned" => match e.expr()? {
                Expr::List(items) => {
                    let mut lanes = Vec::new();
                    for it in items {
                        match it {
                            Expr::Keyword(k) => lanes.push(k),
                            other => return Err(e.value_err("a list of lane keywords", &other)),
                        }
                    }
                    n.assigned = Some(lanes);
                }
                other => return Err(e.value_err("a list of lane keywords", &other)),
            },
            "description" => n.description = Some(e.text()?),
            "ext-type" => n.ext_type = Some(e.string()?),
            "requires" => n.requires = Some(e.predicate()?),
            "ensures" => n.ensures = Some(e.predicate()?),
            "properties" => n.properties = e.claims()?,
            "subdiagram" => n.subdiagram = Some(e.keyword()?),
            "iterate" => n.iterate = Some(e.path()?),
            "layout" => n.layout = Some(pair(&e, "x", "y")?),
            "weight" => n.weight = Some(pair(&e, "cost", "time")?),
            "action" => n.action = Some(action(&e)?),
            _ => return Err(unknown_key(&e)),
        }
    }
    Ok(n)
}

fn pair(e: &Entry<'_>, a: &str, b: &str) -> Result<(f64, f64), ParseError> {
    let m = e.map()?;
    let get = |k: &str| {
        m.iter().find(|(mk, _)| mk == k).and_then(|(_, v)| match v {
            Expr::Number(n) => Some(*n),
            _ => None,
        })
    };
    match (get(a), get(b), m.len()) {
        (Some(x), Some(y), 2) => Ok((x, y)),
        _ => Err(e.err(alloc::format!("`{}` expects {{ .{a}: number .{b}: number }}", e.key))),
    }
}

fn action(e: &Entry<'_>) -> Result<ActionDecl, ParseError> {
    let mut calls = None;
    let mut a = ActionDecl { calls: Expr::Null, assigns: None, requires: None, ensures: None };
    for x in entries(e.block()?)? {
        match x.key.as_str() {
            "calls" => {
                let v = x.expr()?;
                match &v {
                    Expr::Keyword(_) | Expr::Call { .. } => calls = Some(v),
                    other => return Err(x.value_err("a keyword or (:callee ...) form", other)),
                }
            }
            "assigns" => a.assigns = Some(x.path()?),
            "requires" => a.requires = Some(x.predicate()?),
            "ensures" => a.ensures = Some(x.predicate()?),
            _ => return Err(unknown_key(&x)),
        }
    }
    a.calls = calls.ok_or_else(|| missing(e.line, "calls"))?;
    Ok(a)
}

fn query_body(top: &Line) -> Result<QueryDecl, ParseError> {
    let mut q = QueryDecl { description: None, resource_type: String::new(), ext_type: None, filters: Vec::new() };
    let mut have_type = false;
    for e in entries(&top.children)? {
        match e.key.as_str() {
            "description" => q.description = Some(e.text()?),
            "resource-type" => {
                q.resource_type = e.keyword()?;
                have_type = true;
            }
            "ext-type" => q.ext_type = Some(e.string()?),
            "filters" => {
                for l in e.block()? {
                    q.filters.push(filter(l)?);
                }
            }
            _ => return Err(unknown_key(&e)),
        }
    }
    if !have_type {
        return Err(missing(top, "resource-type"));
    }
    Ok(q)
}

fn filter(l: &Line) -> Result<Filter, ParseError> {
    let (text, col) = dash_item(l)?;
    let (key, rest, off) = split_key(text).ok_or_else(|| ParseError::new("expected `key: value` filter", l.line, col, text))?;
    let first = Entry { key: key.to_string(), rest, rest_col: col + off, line: l };
    let parse_first = || -> Result<Expr, ParseError> { parse_expr(first.rest, l.line, first.rest_col) };
    let kw = |e: Expr| -> Result<String, ParseError> {
        match e {
            Expr::Keyword(k) => Ok(k),
            other => Err(first.value_err("a keyword", &other)),
        }
    };
    match key {
        "with" | "without" => {
            if !l.children.is_empty() {
                return Err(nested_err(&l.children[0]));
            }
            let tag = kw(parse_first()?)?;
            Ok(if key == "with" { Filter::With { tag } } else { Filter::Without { tag } })
        }
        "field" => {
            let name = kw(parse_first()?)?;
            let mut op = None;
            let mut value = None;
            for e in entries(&l.children)? {
                match e.key.as_str() {
                    "operator" => {
                        let k = e.keyword()?;
                        op = Some(CmpOp::from_name(&k).ok_or_else(|| e.err(alloc::format!("unknown operator :{k}")))?);
                    }
                    "value" => {
                        let v = e.expr()?;
                        value = Some(v.to_literal().ok_or_else(|| e.value_err("a literal", &v))?);
                    }
                    _ => return Err(unknown_key(&e)),
                }
            }
            Ok(Filter::Field {
                name,
                op: op.ok_or_else(|| missing(l, "operator"))?,
                value: value.ok_or_else(|| missing(l, "value"))?,
            })
        }
        _ => Err(ParseError::new(alloc::format!("unknown filter `{key}`"), l.line, col, key)),
    }
}

fn metric_body(top: &Line) -> Result<MetricDecl, ParseError> {
    let mut query = None;
    let mut aggregation = None;
    let mut m = MetricDecl { description: None, query: String::new(), aggregation: Aggregation::Count, field: None, schedule: None };
    for e in entries(&top.children)? {
        match e.key.as_str() {
            "description" => m.description = Some(e.text()?),
            "query" => query = Some(e.keyword()?),
            "aggregation" => {
                let k = e.keyword()?;
                aggregation = Some(Aggregation::from_name(&k).ok_or_else(|| e.err(alloc::format!("unknown aggregation :{k}")))?);
            }
            "field" => m.field = Some(e.keyword()?),
            "schedule" => m.schedule = Some(e.interval_block()?),
            _ => return Err(unknown_key(&e)),
        }
    }
    m.query = query.ok_or_else(|| missing(top, "query"))?;
    m.aggregation = aggregation.ok_or_else(|| missing(top, "aggregation"))?;
    if m.aggregation != Aggregation::Count && m.field.is_none() {
        return Err(missing(top, "field"));
    }
    Ok(m)
}

fn trigger_body(top: &Line) -> Result<TriggerDecl, ParseError> {
    let mut t = TriggerDecl {
        trigger_type: None,
        description: None,
        active: None,
        auto_start: None,
        schedule: None,
        source_query: String::new(),
        repeat: None,
        calls: String::new(),
        assignment: Vec::new(),
    };
    let (mut source, mut calls) = (None, None);
    for e in entries(&top.children)? {
        match e.key.as_str() {
            "trigger-type" => t.trigger_type = Some(e.keyword()?),
            "description" => t.description = Some(e.text()?),
            "active" => t.active = Some(e.bool()?),
            "auto-start" => t.auto_start = Some(e.bool()?),
            "schedule" => t.schedule = Some(e.interval_block()?),
            "repeat" => t.repeat = Some(e.interval_block()?),
            "calls" => calls = Some(e.keyword()?),
            "source" => {
                for s in entries(e.block()?)? {
                    match s.key.as_str() {
                        "query" => source = Some(s.keyword()?),
                        _ => return Err(unknown_key(&s)),
                    }
                }
            }
            "assignment" => {
                for (x, line, col) in e.expr_list()? {
                    t.assignment.push(assignment(&x).map_err(|m| ParseError::new(m, line, col, x.to_text()))?);
                }
            }
            _ => return Err(unknown_key(&e)),
        }
    }
    t.source_query = source.ok_or_else(|| missing(top, "source"))?;
    t.calls = calls.ok_or_else(|| missing(top, "calls"))?;
    Ok(t)
}

fn assignment(e: &Expr) -> Result<Assignment, String> {
    let Expr::Call { head, args } = e else { return Err("expected an assignment form".into()) };
    let [m] = args.as_slice() else { return Err(alloc::format!(":{head} takes one map argument")) };
    let lane = m
        .map_get("swimlane")
        .and_then(Expr::as_keyword)
        .ok_or_else(|| String::from("assignment needs .swimlane: :lane"))?
        .to_string();
    let term = |k: &str| {
        m.map_get(k).and_then(Term::from_expr).ok_or_else(|| alloc::format!("assignment needs .{k}: term"))
    };
    match head.as_str() {
        "assign-swimlane-contact" => Ok(Assignment::Contact { lane, contact: term("contactId")? }),
        "assign-swimlane-contact-by-ext-id" => Ok(Assignment::ContactByExtId { lane, ext_id: term("extId")? }),
        other => Err(alloc::format!("unknown assignment :{other}")),
    }
}
