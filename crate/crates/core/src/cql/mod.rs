//! The query language: lexer, recursive-descent parser and canonical printer.
//!
//! ```text
//! query     = prefix [kind] [name] [separator filter]
//! prefix    = FIND | COUNT | SELECT field {"," field} FROM
//! kind      = ENTITY | RECORDTYPE | RECORD | PROPERTY | FILE
//! separator = WHICH [HAS] [A | AN | THE] | WITH
//! filter    = and {OR and}
//! and       = unary {AND unary}
//! unary     = [separator] (NOT unary | primary)
//! primary   = "(" filter ")"
//!           | [IS] REFERENCED [AS role] BY target [separator filter]
//!           | REFERENCES target [AS role] [separator filter]
//!           | property (op value | LIKE pattern | IN year)
//! ```
//!
//! Keywords are case-insensitive; names keep their spelling and may span
//! several words. A name that contains a reserved word must be quoted.

pub mod ast;
mod lexer;
mod parser;
mod printer;

use std::fmt;

use thiserror::Error;

pub use ast::*;
pub use lexer::{is_reserved, RESERVED};
pub use parser::parse;
pub use printer::print;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    /// Byte offset into the query text; equals its length at end of input.
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl ParseError {
    pub(crate) fn new(input: &str, offset: usize, message: impl Into<String>, expected: Vec<&str>) -> Self {
        let before = &input[..offset.min(input.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        ParseError {
            offset,
            line,
            column,
            message: message.into(),
            expected: expected.into_iter().map(String::from).collect(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at line {}, column {}: {}",
            self.line, self.column, self.message
        )?;
        if !self.expected.is_empty() {
            write!(f, "; expected {}", self.expected.join(" | "))?;
        }
        Ok(())
    }
}
