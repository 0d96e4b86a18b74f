use std::fmt::Write;

use super::ast::*;
use super::lexer::{is_reserved, tokenize, TokenKind};
use super::parser::{ends_entity_name, ends_field};

/// Canonical text of a query: upper-case keywords, single spaces,
/// `WHICH HAS A` as separator and parentheses around every boolean group.
pub fn print(ast: &QueryAst) -> String {
    let mut out = String::new();
    match &ast.prefix {
        Prefix::Find => out.push_str("FIND"),
        Prefix::Count => out.push_str("COUNT"),
        Prefix::Select(fields) => {
            out.push_str("SELECT ");
            let fields: Vec<String> = fields.iter().map(|f| field_name(f)).collect();
            out.push_str(&fields.join(", "));
            out.push_str(" FROM");
        }
    }
    if let Some(kind) = ast.kind {
        out.push(' ');
        out.push_str(kind.keyword());
    }
    if let Some(n) = &ast.name {
        out.push(' ');
        out.push_str(&entity_name(n));
    }
    if let Some(filter) = &ast.filter {
        out.push_str(" WHICH HAS A ");
        write_filter(&mut out, filter);
    }
    out
}

/// Whether `s` re-lexes as the same run of unreserved words.
fn is_plain(s: &str) -> bool {
    is_plain_until(s, is_reserved)
}

fn is_plain_until(s: &str, stop: fn(&str) -> bool) -> bool {
    if s.is_empty() || s.split(' ').any(str::is_empty) {
        return false;
    }
    let Ok(tokens) = tokenize(s) else {
        return false;
    };
    let words: Vec<&str> = s.split(' ').collect();
    tokens.len() == words.len() + 1
        && tokens
            .iter()
            .zip(&words)
            .all(|(t, w)| matches!(&t.kind, TokenKind::Word(tw) if tw == w && !stop(w)))
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn name(s: &str) -> String {
    if is_plain(s) {
        s.to_string()
    } else {
        quote(s)
    }
}

/// Entity names additionally must not start with a kind keyword.
fn entity_name(s: &str) -> String {
    let first = s.split(' ').next().unwrap_or("");
    if KindRestriction::from_keyword(first).is_none() && is_plain_until(s, ends_entity_name) {
        s.to_string()
    } else {
        quote(s)
    }
}

fn field_name(s: &str) -> String {
    if is_plain_until(s, ends_field) {
        s.to_string()
    } else {
        quote(s)
    }
}

fn target_name(s: &str) -> String {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
        quote(s)
    } else {
        name(s)
    }
}

fn format_double(d: f64) -> String {
    let s = d.to_string();
    if s.contains(['.', 'e', 'E']) || !d.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

fn write_literal(out: &mut String, lit: &Literal) {
    match lit {
        Literal::Quantity { magnitude, unit } => {
            let m = magnitude.to_string();
            let attached = is_reserved(unit) || !is_plain(unit) || unit.contains(' ');
            if attached {
                let _ = write!(out, "{m}{unit}");
            } else {
                let _ = write!(out, "{m} {unit}");
            }
        }
        Literal::Text(t) | Literal::Pattern(t) => out.push_str(&quote(t)),
        Literal::Date(d) => {
            let _ = write!(out, "{}", d.format("%Y-%m-%d"));
        }
        Literal::Datetime(dt) => {
            let _ = write!(out, "{}", dt.format("%Y-%m-%dT%H:%M:%S"));
        }
        Literal::Boolean(b) => out.push_str(if *b { "TRUE" } else { "FALSE" }),
        Literal::Integer(i) => {
            let _ = write!(out, "{i}");
        }
        Literal::Double(d) => out.push_str(&format_double(*d)),
    }
}

fn write_subquery(out: &mut String, sub: &SubQuery) {
    match &sub.target {
        Target::Name(n) => out.push_str(&target_name(n)),
        Target::Id(id) => {
            let _ = write!(out, "{id}");
        }
    }
}

fn write_filter(out: &mut String, f: &FilterNode) {
    match f {
        FilterNode::Comparison { property, op, literal } => {
            out.push_str(&name(property));
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_literal(out, literal);
        }
        FilterNode::InYear { property, year } => {
            let _ = write!(out, "{} IN {year}", name(property));
        }
        FilterNode::And(items) | FilterNode::Or(items) => {
            let joiner = if matches!(f, FilterNode::And(_)) { " AND " } else { " OR " };
            out.push('(');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(joiner);
                }
                write_filter(out, item);
            }
            out.push(')');
        }
        FilterNode::Not(inner) => {
            out.push_str("NOT ");
            write_filter(out, inner);
        }
        FilterNode::BackReference { role, source } => {
            let nested = source.filter.is_some();
            if nested {
                out.push('(');
            }
            out.push_str("IS REFERENCED");
            if let Some(r) = role {
                out.push_str(" AS ");
                out.push_str(&name(r));
            }
            out.push_str(" BY ");
            write_subquery(out, source);
            if let Some(inner) = &source.filter {
                out.push_str(" WHICH HAS A ");
                write_filter(out, inner);
                out.push(')');
            }
        }
        FilterNode::Reference { role, target } => {
            let nested = target.filter.is_some();
            if nested {
                out.push('(');
            }
            out.push_str("REFERENCES ");
            write_subquery(out, target);
            if let Some(r) = role {
                out.push_str(" AS ");
                out.push_str(&name(r));
            }
            if let Some(inner) = &target.filter {
                out.push_str(" WHICH HAS A ");
                write_filter(out, inner);
                out.push(')');
            }
        }
    }
}
