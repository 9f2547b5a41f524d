//! Tokenizer and parser for GFL value expressions: keyword-headed
//! s-expressions, `{ .key: term }` maps, `[a, b]` lists, paths and literals.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::ParseError;
use crate::value::{format_number, Path, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Null,
    Bool(bool),
    Number(f64),
    Str(String),
    Keyword(String),
    Path(Path),
    /// `(:head arg*)`
    Call { head: String, args: Vec<Expr> },
    /// `{ .key: expr ... }`, entry order preserved.
    Map(Vec<(String, Expr)>),
    List(Vec<Expr>),
    /// A dash list nested in a map entry, each item a list of `key: expr` pairs.
    Items(Vec<Vec<(String, Expr)>>),
}

impl Expr {
    pub fn as_keyword(&self) -> Option<&str> {
        match self {
            Expr::Keyword(k) => Some(k),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[(String, Expr)]> {
        match self {
            Expr::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn map_get(&self, key: &str) -> Option<&Expr> {
        self.as_map()?.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Literal expressions convert to values; paths and calls do not.
    pub fn to_literal(&self) -> Option<Value> {
        Some(match self {
            Expr::Null => Value::Null,
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Number(n) => Value::Number(*n),
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::Keyword(k) => Value::Keyword(k.clone()),
            Expr::List(items) => Value::List(items.iter().map(Expr::to_literal).collect::<Option<_>>()?),
            Expr::Map(m) => Value::Map(
                m.iter()
                    .map(|(k, v)| v.to_literal().map(|v| (k.clone(), v)))
                    .collect::<Option<_>>()?,
            ),
            Expr::Path(_) | Expr::Call { .. } | Expr::Items(_) => return None,
        })
    }

    pub fn from_literal(v: &Value) -> Expr {
        match v {
            Value::Null => Expr::Null,
            Value::Bool(b) => Expr::Bool(*b),
            Value::Number(n) => Expr::Number(*n),
            Value::Str(s) => Expr::Str(s.clone()),
            Value::Keyword(k) => Expr::Keyword(k.clone()),
            Value::List(items) => Expr::List(items.iter().map(Expr::from_literal).collect()),
            Value::Map(m) => Expr::Map(m.iter().map(|(k, v)| (k.clone(), Expr::from_literal(v))).collect()),
        }
    }

    fn is_multiline(&self) -> bool {
        match self {
            Expr::Map(m) => !m.is_empty(),
            Expr::Items(_) => true,
            Expr::Call { args, .. } => args.iter().any(Expr::is_multiline),
            Expr::List(items) => items.iter().any(Expr::is_multiline),
            _ => false,
        }
    }

    /// Writes the expression in canonical GFL layout. Non-empty maps open a
    /// block whose entries sit two spaces deeper than `indent`.
    pub fn write_to(&self, out: &mut String, indent: usize) {
        match self {
            Expr::Null => out.push_str("null"),
            Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Expr::Number(n) => out.push_str(&format_number(*n)),
            Expr::Str(s) => write_string(out, s),
            Expr::Keyword(k) => {
                out.push(':');
                out.push_str(k);
            }
            Expr::Path(p) => out.push_str(&p.to_string()),
            Expr::Call { head, args } => {
                out.push_str("(:");
                out.push_str(head);
                for a in args {
                    out.push(' ');
                    a.write_to(out, indent);
                }
                out.push(')');
            }
            Expr::List(items) => {
                out.push('[');
                for (i, e) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    e.write_to(out, indent);
                }
                out.push(']');
            }
            Expr::Map(m) if m.is_empty() => out.push_str("{}"),
            Expr::Map(m) => {
                out.push('{');
                for (k, v) in m {
                    newline(out, indent + 2);
                    out.push('.');
                    out.push_str(k);
                    out.push(':');
                    if let Expr::Items(items) = v {
                        write_items(out, items, indent + 4);
                    } else {
                        out.push(' ');
                        v.write_to(out, indent + 2);
                    }
                }
                newline(out, indent);
                out.push('}');
            }
            Expr::Items(items) => write_items(out, items, indent + 2),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_to(&mut s, 0);
        s
    }

    pub fn is_single_line(&self) -> bool {
        !self.is_multiline()
    }
}

fn newline(out: &mut String, indent: usize) {
    out.push('\n');
    for _ in 0..indent {
        out.push(' ');
    }
}

fn write_items(out: &mut String, items: &[Vec<(String, Expr)>], indent: usize) {
    for item in items {
        newline(out, indent);
        out.push_str("- ");
        for (i, (k, v)) in item.iter().enumerate() {
            if i > 0 {
                newline(out, indent + 2);
            }
            out.push_str(k);
            out.push_str(": ");
            v.write_to(out, indent + 2);
        }
    }
}

pub fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Dash,
    Keyword(String),
    Path(Path),
    MapKey(String),
    BareKey(String),
    Str(String),
    Number(f64),
    Null,
    True,
    False,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
    text: String,
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '?' | '!' | '*' | '+' | '/' | '<' | '>' | '=')
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_')
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    fn err(&self, line: usize, col: usize, msg: impl Into<String>, ctx: impl Into<String>) -> ParseError {
        ParseError::new(msg, line, col, ctx)
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
                continue;
            }
            if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
                continue;
            }
            let (line, col, start) = (self.line, self.col, self.pos);
            let tok = match c {
                '(' => {
                    self.bump();
                    Tok::LParen
                }
                ')' => {
                    self.bump();
                    Tok::RParen
                }
                '{' => {
                    self.bump();
                    Tok::LBrace
                }
                '}' => {
                    self.bump();
                    Tok::RBrace
                }
                '[' => {
                    self.bump();
                    Tok::LBracket
                }
                ']' => {
                    self.bump();
                    Tok::RBracket
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '"' => Tok::Str(self.string(line, col)?),
                ':' => {
                    self.bump();
                    let word = self.take_while(is_word_char);
                    if word.is_empty() {
                        return Err(self.err(line, col, "empty keyword", ":"));
                    }
                    Tok::Keyword(word)
                }
                '$' => {
                    self.bump();
                    let rest = self.take_while(|c| is_key_char(c) || c == '.');
                    let text = alloc::format!("${rest}");
                    match Path::parse(&text) {
                        Some(p) if !rest.ends_with('.') => Tok::Path(p),
                        _ => return Err(self.err(line, col, "malformed variable path", text)),
                    }
                }
                '.' => {
                    self.bump();
                    let key = self.take_while(is_key_char);
                    if key.is_empty() || self.peek() != Some(':') {
                        return Err(self.err(line, col, "expected map key of the form .key:", alloc::format!(".{key}")));
                    }
                    self.bump();
                    Tok::MapKey(key)
                }
                '-' if self.peek_at(1).is_none_or(|c| c.is_whitespace()) => {
                    self.bump();
                    Tok::Dash
                }
                c if c == '-' || c == '+' || c.is_ascii_digit() => {
                    let text = self.take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+'));
                    match text.parse::<f64>() {
                        Ok(n) if n.is_finite() => Tok::Number(n),
                        _ => return Err(self.err(line, col, "malformed number", text)),
                    }
                }
                c if c.is_ascii_alphabetic() => {
                    let word = self.take_while(is_key_char);
                    if self.peek() == Some(':') {
                        self.bump();
                        Tok::BareKey(word)
                    } else {
                        match word.as_str() {
                            "null" => Tok::Null,
                            "true" => Tok::True,
                            "false" => Tok::False,
                            _ => return Err(self.err(line, col, "unexpected bare word", word)),
                        }
                    }
                }
                other => return Err(self.err(line, col, "unexpected character", other.to_string())),
            };
            let text: String = self.chars[start..self.pos].iter().collect();
            out.push(Spanned { tok, line, col, text });
        }
        Ok(out)
    }

    fn string(&mut self, line: usize, col: usize) -> Result<String, ParseError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.err(line, col, "unterminated string", "\"")),
                Some('"') => return Ok(s),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('r') => s.push('\r'),
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some(o) => return Err(self.err(self.line, self.col, "unknown escape", alloc::format!("\\{o}"))),
                    None => return Err(self.err(line, col, "unterminated string", "\"")),
                },
                Some(c) => s.push(c),
            }
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end_line: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eof_err(&self, msg: &str) -> ParseError {
        ParseError::new(msg, self.end_line, self.end_col, "<end of value>")
    }

    fn unexpected(t: &Spanned, msg: &str) -> ParseError {
        ParseError::new(msg, t.line, t.col, t.text.clone())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let t = self.next().ok_or_else(|| self.eof_err("expected a value"))?;
        Ok(match t.tok {
            Tok::Null => Expr::Null,
            Tok::True => Expr::Bool(true),
            Tok::False => Expr::Bool(false),
            Tok::Number(n) => Expr::Number(n),
            Tok::Str(s) => Expr::Str(s),
            Tok::Keyword(k) => Expr::Keyword(k),
            Tok::Path(p) => Expr::Path(p),
            Tok::LParen => {
                let head = self.next().ok_or_else(|| self.eof_err("expected keyword head"))?;
                let Tok::Keyword(head) = head.tok else {
                    return Err(Self::unexpected(&head, "call head must be a keyword"));
                };
                let mut args = Vec::new();
                loop {
                    match self.peek() {
                        None => return Err(self.eof_err("unclosed (")),
                        Some(s) if s.tok == Tok::RParen => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => args.push(self.expr()?),
                    }
                }
                Expr::Call { head, args }
            }
            Tok::LBrace => {
                let mut entries: Vec<(String, Expr)> = Vec::new();
                loop {
                    let t = self.next().ok_or_else(|| self.eof_err("unclosed {"))?;
                    match &t.tok {
                        Tok::RBrace => break,
                        Tok::Comma => continue,
                        Tok::MapKey(k) => {
                            let k = k.clone();
                            if entries.iter().any(|(e, _)| *e == k) {
                                return Err(Self::unexpected(&t, "duplicate map key"));
                            }
                            let v = if matches!(self.peek(), Some(s) if s.tok == Tok::Dash) {
                                self.items()?
                            } else {
                                self.expr()?
                            };
                            entries.push((k, v));
                        }
                        _ => return Err(Self::unexpected(&t, "expected .key: inside map")),
                    }
                }
                Expr::Map(entries)
            }
            Tok::LBracket => {
                let mut items = Vec::new();
                loop {
                    match self.peek() {
                        None => return Err(self.eof_err("unclosed [")),
                        Some(s) if s.tok == Tok::RBracket => {
                            self.pos += 1;
                            break;
                        }
                        Some(s) if s.tok == Tok::Comma => self.pos += 1,
                        Some(_) => items.push(self.expr()?),
                    }
                }
                Expr::List(items)
            }
            _ => return Err(Self::unexpected(&t, "unexpected token")),
        })
    }

    fn items(&mut self) -> Result<Expr, ParseError> {
        let mut items = Vec::new();
        while matches!(self.peek(), Some(s) if s.tok == Tok::Dash) {
            self.pos += 1;
            let mut pairs: Vec<(String, Expr)> = Vec::new();
            while let Some(Spanned { tok: Tok::BareKey(k), .. }) = self.peek().cloned() {
                self.pos += 1;
                pairs.push((k, self.expr()?));
            }
            if pairs.is_empty() {
                let t = self.peek().cloned();
                return Err(match t {
                    Some(t) => Self::unexpected(&t, "expected key: value after -"),
                    None => self.eof_err("expected key: value after -"),
                });
            }
            items.push(pairs);
        }
        Ok(Expr::Items(items))
    }
}

/// Parses exactly one expression from `text`, whose first character sits at
/// (`line`, `col`) in the source document.
pub fn parse_expr(text: &str, line: usize, col: usize) -> Result<Expr, ParseError> {
    let lexer = Lexer { chars: text.chars().collect(), pos: 0, line, col };
    let (mut end_line, mut end_col) = (line, col);
    for c in text.chars() {
        if c == '\n' {
            end_line += 1;
            end_col = 1;
        } else {
            end_col += 1;
        }
    }
    let toks = lexer.tokens()?;
    let mut p = Parser { toks, pos: 0, end_line, end_col };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(Parser::unexpected(t, "trailing tokens after value"));
    }
    Ok(e)
}

/// Convenience for tests and programmatic construction.
pub fn expr(text: &str) -> Result<Expr, ParseError> {
    parse_expr(text, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn call_with_map_argument() {
        let e = expr("(:multiply {\n  .a: $.a\n  .b: $.a\n})").unwrap();
        let Expr::Call { head, args } = &e else { panic!() };
        assert_eq!(head, "multiply");
        assert_eq!(args[0].map_get("a"), Some(&Expr::Path(Path::parse("$.a").unwrap())));
        assert_eq!(expr(&e.to_text()).unwrap(), e);
    }

    #[test]
    fn items_inside_map() {
        let e = expr("(:await-with-tag {\n .resource: $.x\n .filters:\n  - with: :done\n})").unwrap();
        let Expr::Call { args, .. } = &e else { panic!() };
        assert_eq!(
            args[0].map_get("filters"),
            Some(&Expr::Items(alloc::vec![alloc::vec![("with".into(), Expr::Keyword("done".into()))]]))
        );
        assert_eq!(expr(&e.to_text()).unwrap(), e);
    }

    #[test]
    fn literals() {
        assert_eq!(expr("-1").unwrap(), Expr::Number(-1.0));
        assert_eq!(expr("1e6").unwrap(), Expr::Number(1e6));
        assert_eq!(expr("null").unwrap(), Expr::Null);
        assert_eq!(expr("[:coo, :sales]").unwrap().to_text(), "[:coo, :sales]");
        assert_eq!(expr("\"a\\\"b\"").unwrap(), Expr::Str("a\"b".into()));
    }

    #[test]
    fn error_positions_are_one_based() {
        let err = expr("(:ne $.a nul)").unwrap_err();
        assert_eq!((err.line, err.column), (1, 10));
        assert_eq!(err.context, "nul");
        let err = parse_expr("(:a\n  ?)", 4, 9).unwrap_err();
        assert_eq!((err.line, err.column), (5, 3));
    }

    #[test]
    fn unclosed_and_trailing() {
        assert!(expr("(:a").is_err());
        assert!(expr(":a :b").is_err());
        assert!(expr("{ .a: 1 .a: 2 }").is_err());
    }
}
