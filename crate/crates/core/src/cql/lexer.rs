use crate::units::CompareOp;

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Word(String),
    Quoted(String),
    Op(CompareOp),
    LParen,
    RParen,
    Comma,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte offsets into the query text.
    pub start: usize,
    pub end: usize,
}

/// Words that terminate names and may only appear inside one when quoted.
pub const RESERVED: [&str; 17] = [
    "WHICH",
    "WITH",
    "HAS",
    "A",
    "AN",
    "THE",
    "AND",
    "OR",
    "NOT",
    "LIKE",
    "IN",
    "FROM",
    "REFERENCED",
    "REFERENCES",
    "BY",
    "AS",
    "IS",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '"' | '\'' | '=' | '!' | '<' | '>' | '(' | ')' | ',')
}

pub fn tokenize(input: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let single = |kind| Token {
            kind,
            start,
            end: start + 1,
        };
        match c {
            '(' => {
                chars.next();
                tokens.push(single(TokenKind::LParen));
            }
            ')' => {
                chars.next();
                tokens.push(single(TokenKind::RParen));
            }
            ',' => {
                chars.next();
                tokens.push(single(TokenKind::Comma));
            }
            '=' | '!' | '<' | '>' => {
                chars.next();
                let next = chars.peek().map(|&(_, n)| n);
                let (op, len) = match (c, next) {
                    ('!', Some('=')) => (CompareOp::Ne, 2),
                    ('<', Some('=')) => (CompareOp::Le, 2),
                    ('>', Some('=')) => (CompareOp::Ge, 2),
                    ('<', _) => (CompareOp::Lt, 1),
                    ('>', _) => (CompareOp::Gt, 1),
                    ('=', _) => (CompareOp::Eq, 1),
                    _ => {
                        return Err(ParseError::new(input, start, "unknown operator `!`", vec!["=", "!=", "<", "<=", ">", ">="]))
                    }
                };
                if len == 2 {
                    chars.next();
                }
                // `==`, `=>` and friends are not operators
                if let Some(&(pos, n)) = chars.peek() {
                    if matches!(n, '=' | '<' | '>' | '!') {
                        let text = &input[start..pos + n.len_utf8()];
                        return Err(ParseError::new(input, start, format!("unknown operator `{text}`"), vec!["=", "!=", "<", "<=", ">", ">="]));
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Op(op),
                    start,
                    end: start + len,
                });
            }
            '"' | '\'' => {
                let quote = c;
                chars.next();
                let mut text = String::new();
                let mut end = None;
                while let Some((pos, ch)) = chars.next() {
                    match ch {
                        '\\' => match chars.next() {
                            Some((_, esc)) => text.push(esc),
                            None => break,
                        },
                        _ if ch == quote => {
                            end = Some(pos + 1);
                            break;
                        }
                        _ => text.push(ch),
                    }
                }
                let Some(end) = end else {
                    return Err(ParseError::new(input, input.len(), "unterminated string", vec![if quote == '"' { "\"" } else { "'" }]));
                };
                tokens.push(Token {
                    kind: TokenKind::Quoted(text),
                    start,
                    end,
                });
            }
            _ => {
                let mut end = start;
                while let Some(&(pos, ch)) = chars.peek() {
                    if !is_word_char(ch) {
                        break;
                    }
                    end = pos + ch.len_utf8();
                    chars.next();
                }
                tokens.push(Token {
                    kind: TokenKind::Word(input[start..end].to_string()),
                    start,
                    end,
                });
            }
        }
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        start: input.len(),
        end: input.len(),
    });
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn splits_operators_from_words() {
        assert_eq!(
            kinds("x>=26C"),
            vec![
                TokenKind::Word("x".into()),
                TokenKind::Op(CompareOp::Ge),
                TokenKind::Word("26C".into()),
                TokenKind::Eof
            ]
        );
    }

    #[test]
    fn quoted_with_escapes() {
        assert_eq!(
            kinds(r#""a \"b\" c""#),
            vec![TokenKind::Quoted("a \"b\" c".into()), TokenKind::Eof]
        );
    }

    #[test]
    fn rejects_unknown_operators() {
        assert!(tokenize("x == 1").is_err());
        assert!(tokenize("x ! 1").is_err());
        assert!(tokenize("x => 1").is_err());
        let err = tokenize("name = \"open").unwrap_err();
        assert_eq!(err.offset, 12);
    }

    #[test]
    fn unicode_words() {
        assert_eq!(
            kinds("t > 5 °C"),
            vec![
                TokenKind::Word("t".into()),
                TokenKind::Op(CompareOp::Gt),
                TokenKind::Word("5".into()),
                TokenKind::Word("°C".into()),
                TokenKind::Eof
            ]
        );
    }
}
