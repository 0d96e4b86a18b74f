use chrono::{NaiveDate, NaiveDateTime};

use crate::datamodel::EntityId;
use crate::units::split_number_prefix;

use super::ast::*;
use super::lexer::{is_reserved, tokenize, Token, TokenKind};
use super::ParseError;

pub fn parse(input: &str) -> Result<QueryAst, ParseError> {
    let tokens = tokenize(input)?;
    let mut p = Parser {
        input,
        tokens,
        pos: 0,
    };
    let ast = p.query()?;
    Ok(ast)
}

const NOISE: [&str; 6] = ["WHICH", "WITH", "HAS", "A", "AN", "THE"];
const ARTICLES: [&str; 3] = ["A", "AN", "THE"];

struct Parser<'a> {
    input: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, ahead: usize) -> &Token {
        let idx = (self.pos + ahead).min(self.tokens.len() - 1);
        &self.tokens[idx]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let tok = self.peek();
        let found = match &tok.kind {
            TokenKind::Eof => "end of input".to_string(),
            _ => format!("`{}`", &self.input[tok.start..tok.end]),
        };
        ParseError::new(
            self.input,
            tok.start,
            format!("unexpected {found}"),
            expected.to_vec(),
        )
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn is_keyword_at(&self, ahead: usize, kw: &str) -> bool {
        matches!(&self.peek_at(ahead).kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn skip_any(&mut self, words: &[&str]) {
        while words.iter().any(|w| self.is_keyword(w)) {
            self.advance();
        }
    }

    fn at_plain_word(&self) -> bool {
        matches!(&self.peek().kind, TokenKind::Word(w) if !is_reserved(w))
    }

    /// A quoted string or a run of unreserved words joined by single spaces.
    fn name(&mut self, what: &str) -> Result<String, ParseError> {
        self.name_until(what, is_reserved)
    }

    /// Like [`Self::name`], with a custom set of terminating words.
    fn name_until(&mut self, what: &str, stop: fn(&str) -> bool) -> Result<String, ParseError> {
        if let TokenKind::Quoted(s) = &self.peek().kind {
            let s = s.clone();
            self.advance();
            return Ok(s);
        }
        let mut words = Vec::new();
        while let TokenKind::Word(w) = &self.peek().kind {
            if stop(w) {
                break;
            }
            words.push(w.clone());
            self.advance();
        }
        if words.is_empty() {
            return Err(self.error(&[what]));
        }
        Ok(words.join(" "))
    }

    fn query(&mut self) -> Result<QueryAst, ParseError> {
        let prefix = if self.eat_keyword("FIND") {
            Prefix::Find
        } else if self.eat_keyword("COUNT") {
            Prefix::Count
        } else if self.eat_keyword("SELECT") {
            let mut fields = vec![self.name_until("field name", ends_field)?];
            while self.peek().kind == TokenKind::Comma {
                self.advance();
                fields.push(self.name_until("field name", ends_field)?);
            }
            if !self.eat_keyword("FROM") {
                return Err(self.error(&[",", "FROM"]));
            }
            Prefix::Select(fields)
        } else {
            return Err(self.error(&["FIND", "COUNT", "SELECT"]));
        };

        let mut kind = None;
        if let TokenKind::Word(w) = &self.peek().kind {
            if let Some(k) = KindRestriction::from_keyword(w) {
                kind = Some(k);
                self.advance();
            }
        }
        let name = match &self.peek().kind {
            TokenKind::Quoted(_) => Some(self.name_until("entity name", ends_entity_name)?),
            TokenKind::Word(w) if !ends_entity_name(w) => Some(self.name_until("entity name", ends_entity_name)?),
            _ if kind.is_some() => None,
            _ => return Err(self.error(&["entity name", "ENTITY", "RECORDTYPE", "RECORD", "PROPERTY", "FILE"])),
        };

        let filter = if self.is_keyword("WHICH") || self.is_keyword("WITH") {
            Some(self.separated_filter()?)
        } else {
            None
        };
        if self.peek().kind != TokenKind::Eof {
            let mut expected = vec!["end of input"];
            if filter.is_none() {
                expected.extend(["WHICH", "WITH"]);
            } else {
                expected.extend(["AND", "OR"]);
            }
            return Err(self.error(&expected));
        }
        Ok(QueryAst {
            prefix,
            kind,
            name,
            filter,
        })
    }

    /// `WHICH [HAS] [A|AN|THE] filter` or `WITH filter`.
    fn separated_filter(&mut self) -> Result<FilterNode, ParseError> {
        if !(self.eat_keyword("WHICH") || self.eat_keyword("WITH")) {
            return Err(self.error(&["WHICH", "WITH"]));
        }
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<FilterNode, ParseError> {
        let mut items = vec![self.and_expr()?];
        while self.eat_keyword("OR") {
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            FilterNode::Or(items)
        })
    }

    fn and_expr(&mut self) -> Result<FilterNode, ParseError> {
        let mut items = vec![self.unary()?];
        while self.eat_keyword("AND") {
            items.push(self.unary()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            FilterNode::And(items)
        })
    }

    fn unary(&mut self) -> Result<FilterNode, ParseError> {
        self.skip_any(&NOISE);
        if self.eat_keyword("NOT") {
            return Ok(FilterNode::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<FilterNode, ParseError> {
        if self.peek().kind == TokenKind::LParen {
            self.advance();
            let inner = self.or_expr()?;
            if self.peek().kind != TokenKind::RParen {
                return Err(self.error(&[")", "AND", "OR"]));
            }
            self.advance();
            return Ok(inner);
        }
        if self.is_keyword("REFERENCED") || (self.is_keyword("IS") && self.is_keyword_at(1, "REFERENCED")) {
            self.eat_keyword("IS");
            self.advance();
            let role = if self.eat_keyword("AS") {
                self.skip_any(&ARTICLES);
                Some(self.name("role name")?)
            } else {
                None
            };
            if !self.eat_keyword("BY") {
                return Err(self.error(if role.is_some() { &["BY"] } else { &["AS", "BY"] }));
            }
            self.skip_any(&ARTICLES);
            let target = self.target()?;
            let filter = self.nested_filter()?;
            return Ok(FilterNode::BackReference {
                role,
                source: SubQuery { target, filter },
            });
        }
        if self.eat_keyword("REFERENCES") {
            self.skip_any(&ARTICLES);
            let target = self.target()?;
            let role = if self.eat_keyword("AS") {
                self.skip_any(&ARTICLES);
                Some(self.name("role name")?)
            } else {
                None
            };
            let filter = self.nested_filter()?;
            return Ok(FilterNode::Reference {
                role,
                target: SubQuery { target, filter },
            });
        }
        if self.is_keyword("IS") {
            return Err(self.error(&["REFERENCED"]));
        }
        self.comparison()
    }

    fn nested_filter(&mut self) -> Result<Option<Box<FilterNode>>, ParseError> {
        if self.is_keyword("WHICH") || self.is_keyword("WITH") {
            Ok(Some(Box::new(self.separated_filter()?)))
        } else {
            Ok(None)
        }
    }

    fn target(&mut self) -> Result<Target, ParseError> {
        if let TokenKind::Word(w) = &self.peek().kind {
            if !w.is_empty() && w.bytes().all(|b| b.is_ascii_digit()) {
                let tok = self.advance();
                return w_to_id(self.input, &tok).map(Target::Id);
            }
        }
        Ok(Target::Name(self.name("entity name")?))
    }

    fn comparison(&mut self) -> Result<FilterNode, ParseError> {
        if !matches!(self.peek().kind, TokenKind::Quoted(_)) && !self.at_plain_word() {
            return Err(self.error(&["property name", "NOT", "(", "IS REFERENCED", "REFERENCES"]));
        }
        let property = self.name("property name")?;
        match self.peek().kind.clone() {
            TokenKind::Op(op) => {
                self.advance();
                let literal = self.literal()?;
                Ok(FilterNode::Comparison {
                    property,
                    op: Operator::Compare(op),
                    literal,
                })
            }
            TokenKind::Word(w) if w.eq_ignore_ascii_case("LIKE") => {
                self.advance();
                let pattern = self.pattern()?;
                Ok(FilterNode::Comparison {
                    property,
                    op: Operator::Like,
                    literal: Literal::Pattern(pattern),
                })
            }
            TokenKind::Word(w) if w.eq_ignore_ascii_case("IN") => {
                self.advance();
                let tok = self.peek().clone();
                let year = match &tok.kind {
                    TokenKind::Word(y) => y.parse::<i32>().ok().filter(|y| NaiveDate::from_ymd_opt(*y, 1, 1).is_some()),
                    _ => None,
                };
                let Some(year) = year else {
                    return Err(self.error(&["year"]));
                };
                self.advance();
                Ok(FilterNode::InYear { property, year })
            }
            _ => Err(self.error(&["=", "!=", "<", "<=", ">", ">=", "LIKE", "IN"])),
        }
    }

    fn at_connective_or_end(&self) -> bool {
        match &self.peek().kind {
            TokenKind::Word(w) => w.eq_ignore_ascii_case("AND") || w.eq_ignore_ascii_case("OR"),
            _ => true,
        }
    }

    /// Raw text up to the next `AND`/`OR`, `)` or end of input.
    fn pattern(&mut self) -> Result<String, ParseError> {
        if let TokenKind::Quoted(s) = &self.peek().kind {
            let s = s.clone();
            self.advance();
            return Ok(s);
        }
        let start = self.peek().start;
        let mut end = None;
        while !self.at_connective_or_end() {
            if !matches!(self.peek().kind, TokenKind::Word(_)) {
                break;
            }
            end = Some(self.advance().end);
        }
        match end {
            Some(end) => Ok(self.input[start..end].to_string()),
            None => Err(self.error(&["pattern"])),
        }
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let tok = self.peek().clone();
        let word = match &tok.kind {
            TokenKind::Quoted(s) => {
                self.advance();
                return Ok(Literal::Text(s.clone()));
            }
            TokenKind::Word(w) if !w.eq_ignore_ascii_case("AND") && !w.eq_ignore_ascii_case("OR") => w.clone(),
            _ => return Err(self.error(&["value"])),
        };
        if let Some(lit) = date_literal(&word) {
            self.advance();
            return Ok(lit);
        }
        if word.eq_ignore_ascii_case("TRUE") || word.eq_ignore_ascii_case("FALSE") {
            self.advance();
            return Ok(Literal::Boolean(word.eq_ignore_ascii_case("TRUE")));
        }
        let (number, suffix) = split_number_prefix(&word);
        if !number.is_empty() {
            self.advance();
            let is_float = number.contains(['.', 'e', 'E']);
            let bad_number = || ParseError::new(self.input, tok.start, format!("malformed number `{word}`"), vec!["number"]);
            if !suffix.is_empty() {
                let magnitude: f64 = number.parse().map_err(|_| bad_number())?;
                if !magnitude.is_finite() {
                    return Err(bad_number());
                }
                return Ok(Literal::Quantity {
                    magnitude,
                    unit: suffix.to_string(),
                });
            }
            if let TokenKind::Word(unit) = &self.peek().kind {
                if !is_reserved(unit) {
                    let unit = unit.clone();
                    let magnitude: f64 = number.parse().map_err(|_| bad_number())?;
                    if !magnitude.is_finite() {
                        return Err(bad_number());
                    }
                    self.advance();
                    return Ok(Literal::Quantity { magnitude, unit });
                }
            }
            if !is_float {
                if let Ok(i) = number.parse::<i64>() {
                    return Ok(Literal::Integer(i));
                }
            }
            let d: f64 = number.parse().map_err(|_| bad_number())?;
            if !d.is_finite() {
                return Err(bad_number());
            }
            return Ok(Literal::Double(d));
        }
        // bare text: words up to the next connective
        let mut words = Vec::new();
        while !self.at_connective_or_end() {
            match &self.peek().kind {
                TokenKind::Word(w) => {
                    words.push(w.clone());
                    self.advance();
                }
                _ => break,
            }
        }
        Ok(Literal::Text(words.join(" ")))
    }
}

pub(super) fn ends_entity_name(word: &str) -> bool {
    word.eq_ignore_ascii_case("WHICH") || word.eq_ignore_ascii_case("WITH")
}

pub(super) fn ends_field(word: &str) -> bool {
    word.eq_ignore_ascii_case("FROM")
}

fn w_to_id(input: &str, tok: &Token) -> Result<EntityId, ParseError> {
    let text = &input[tok.start..tok.end];
    text.parse::<i64>()
        .ok()
        .and_then(EntityId::new)
        .ok_or_else(|| ParseError::new(input, tok.start, format!("invalid entity id `{text}`"), vec!["entity id"]))
}

fn date_literal(word: &str) -> Option<Literal> {
    let bytes = word.as_bytes();
    // cheap shape check before handing over to chrono
    if bytes.len() < 10 || !bytes[..4].iter().all(u8::is_ascii_digit) || bytes[4] != b'-' {
        return None;
    }
    if bytes.len() == 10 {
        return NaiveDate::parse_from_str(word, "%Y-%m-%d").ok().map(Literal::Date);
    }
    let trimmed = word.strip_suffix('Z').unwrap_or(word);
    NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(Literal::Datetime)
}
