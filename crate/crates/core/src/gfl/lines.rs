//! Physical lines to an indentation tree.
//!
//! Blank lines and full-line `#` comments are dropped. A `key: |` line absorbs
//! the deeper-indented lines after it as literal text. A line whose brackets
//! do not balance absorbs following lines until they do, so multi-line
//! s-expressions become one logical line.

use alloc::string::String;
use alloc::vec::Vec;

use super::ParseError;

#[derive(Debug, Clone)]
pub(crate) struct Line {
    /// 1-based line of the first physical line.
    pub line: usize,
    pub indent: usize,
    /// Content after the indentation. Continuation lines of a bracket join
    /// are appended verbatim after `\n`.
    pub text: String,
    pub literal: Option<String>,
    pub children: Vec<Line>,
}

impl Line {
    pub fn col(&self) -> usize {
        self.indent + 1
    }
}

fn leading_spaces(raw: &str, line_no: usize) -> Result<usize, ParseError> {
    let mut n = 0;
    for c in raw.chars() {
        match c {
            ' ' => n += 1,
            '\t' => return Err(ParseError::new("tab in indentation", line_no, n + 1, "\\t")),
            _ => break,
        }
    }
    Ok(n)
}

/// Net bracket depth change of `s`, ignoring string contents and `#`
/// comments. `Err(col)` reports a closer with no opener (0-based char index).
fn bracket_delta(s: &str, start_depth: i64) -> Result<i64, usize> {
    let mut depth = start_depth;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s.chars().enumerate() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '#' => break,
            '(' | '{' | '[' => depth += 1,
            ')' | '}' | ']' => {
                depth -= 1;
                if depth < 0 {
                    return Err(i);
                }
            }
            _ => {}
        }
    }
    Ok(depth)
}

fn is_literal_marker(content: &str) -> bool {
    let t = content.trim_end();
    t.ends_with(": |") || t == "|" || t.ends_with(":|")
}

pub(crate) fn layout(text: &str) -> Result<Vec<Line>, ParseError> {
    let raw: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut flat: Vec<Line> = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let line_no = i + 1;
        let phys = raw[i];
        i += 1;
        let trimmed = phys.trim_start_matches(' ');
        if trimmed.trim().is_empty() {
            continue;
        }
        let indent = leading_spaces(phys, line_no)?;
        if trimmed.starts_with('#') {
            continue;
        }
        if indent % 2 != 0 {
            return Err(ParseError::new("indentation must be a multiple of two spaces", line_no, indent + 1, trimmed));
        }
        let mut content = String::from(trimmed.trim_end());
        let mut literal = None;
        if is_literal_marker(&content) {
            let t = content.trim_end();
            content = String::from(t[..t.len() - 1].trim_end());
            let mut body: Vec<&str> = Vec::new();
            while i < raw.len() {
                let l = raw[i];
                if l.trim().is_empty() {
                    body.push("");
                    i += 1;
                    continue;
                }
                if leading_spaces(l, i + 1)? <= indent {
                    break;
                }
                body.push(l);
                i += 1;
            }
            while body.last().is_some_and(|l| l.trim().is_empty()) {
                body.pop();
            }
            let min = body
                .iter()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.len() - l.trim_start_matches(' ').len())
                .min()
                .unwrap_or(0);
            let mut lit = String::new();
            for (k, l) in body.iter().enumerate() {
                if k > 0 {
                    lit.push('\n');
                }
                if l.len() >= min {
                    lit.push_str(l[min..].trim_end());
                }
            }
            literal = Some(lit);
        } else {
            let mut depth = bracket_delta(&content, 0)
                .map_err(|c| ParseError::new("unbalanced closing bracket", line_no, indent + c + 1, trimmed))?;
            while depth > 0 {
                if i >= raw.len() {
                    return Err(ParseError::new("unclosed bracket", line_no, indent + 1, trimmed));
                }
                let l = raw[i];
                i += 1;
                if l.trim_start().starts_with('#') {
                    content.push('\n');
                    continue;
                }
                depth = bracket_delta(l, depth).map_err(|c| {
                    ParseError::new("unbalanced closing bracket", i, c + 1, l.trim())
                })?;
                content.push('\n');
                content.push_str(l.trim_end());
            }
        }
        flat.push(Line { line: line_no, indent, text: content, literal, children: Vec::new() });
    }
    build_tree(flat)
}

fn build_tree(flat: Vec<Line>) -> Result<Vec<Line>, ParseError> {
    // Stack of open parents; index 0 is a synthetic root at indent -2.
    let mut stack: Vec<(i64, Line)> = alloc::vec![(
        -2,
        Line { line: 0, indent: 0, text: String::new(), literal: None, children: Vec::new() }
    )];
    for line in flat {
        let ind = line.indent as i64;
        while stack.last().is_some_and(|(pi, _)| *pi >= ind) {
            let (_, done) = stack.pop().expect("nonempty");
            stack.last_mut().expect("root stays").1.children.push(done);
        }
        let parent_indent = stack.last().expect("root stays").0;
        if ind != parent_indent + 2 {
            return Err(ParseError::new(
                "unexpected indentation",
                line.line,
                line.indent + 1,
                line.text.lines().next().unwrap_or(""),
            ));
        }
        if stack.last().is_some_and(|(_, p)| p.literal.is_some()) {
            return Err(ParseError::new("literal block cannot have children", line.line, line.indent + 1, line.text.clone()));
        }
        stack.push((ind, line));
    }
    while stack.len() > 1 {
        let (_, done) = stack.pop().expect("nonempty");
        stack.last_mut().expect("root stays").1.children.push(done);
    }
    Ok(stack.pop().expect("root").1.children)
}
