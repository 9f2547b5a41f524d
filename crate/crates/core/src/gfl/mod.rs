//! GFL: the textual notation for diagrams, queries, metrics and triggers.

use alloc::string::String;
use alloc::vec::Vec;

pub mod ast;
mod lines;
mod parse;
mod print;
pub mod sexpr;

pub use ast::*;
pub use print::serialize;
pub use sexpr::Expr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message} (at `{context}`)")]
pub struct ParseError {
    pub message: String,
    pub line: usize,
    pub column: usize,
    pub context: String,
}

impl ParseError {
    pub fn new(message: impl Into<String>, line: usize, column: usize, context: impl Into<String>) -> Self {
        ParseError { message: message.into(), line, column, context: context.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDocument {
    pub text: String,
    /// File path, or `<memory>`.
    pub origin: String,
}

impl SourceDocument {
    pub fn memory(text: impl Into<String>) -> Self {
        SourceDocument { text: text.into(), origin: String::from("<memory>") }
    }
}

pub fn parse(doc: &SourceDocument) -> Result<Vec<Declaration>, ParseError> {
    parse::parse_text(&doc.text)
}

pub fn parse_str(text: &str) -> Result<Vec<Declaration>, ParseError> {
    parse::parse_text(text)
}

/// Serializes several declarations separated by blank lines.
pub fn serialize_all(decls: &[Declaration]) -> String {
    let mut out = String::new();
    for (i, d) in decls.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&serialize(d));
    }
    out
}
