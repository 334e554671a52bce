//! Tokeniser for the formula surface syntax.

use std::fmt;

/// Lexical or syntactic error, carrying a byte offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} (at offset {pos})")]
pub struct SyntaxError {
    pub pos: usize,
    pub message: String,
}

impl SyntaxError {
    pub fn new(pos: usize, message: impl Into<String>) -> Self {
        SyntaxError {
            pos,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    /// `P`
    ProbOp,
    /// `T`
    TrueLit,
    /// `F`
    FalseLit,
    /// `U`
    Until,
    /// `X_{`
    NextOpen,
    Ident,
    Number,
    LBracket,
    RBracket,
    LParen,
    RParen,
    RBrace,
    Comma,
    Lt,
    Le,
    Gt,
    Ge,
    Not,
    And,
    Or,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            TokenKind::ProbOp => "'P'",
            TokenKind::TrueLit => "'T'",
            TokenKind::FalseLit => "'F'",
            TokenKind::Until => "'U'",
            TokenKind::NextOpen => "'X_{'",
            TokenKind::Ident => "identifier",
            TokenKind::Number => "number",
            TokenKind::LBracket => "'['",
            TokenKind::RBracket => "']'",
            TokenKind::LParen => "'('",
            TokenKind::RParen => "')'",
            TokenKind::RBrace => "'}'",
            TokenKind::Comma => "','",
            TokenKind::Lt => "'<'",
            TokenKind::Le => "'<='",
            TokenKind::Gt => "'>'",
            TokenKind::Ge => "'>='",
            TokenKind::Not => "'!'",
            TokenKind::And => "'&'",
            TokenKind::Or => "'|'",
        };
        write!(f, "{text}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub pos: usize,
}

/// Split `text` into formula tokens, skipping whitespace.
pub fn tokenize(text: &str) -> Result<Vec<Token>, SyntaxError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            'P' => {
                i += 1;
                TokenKind::ProbOp
            }
            'T' => {
                i += 1;
                TokenKind::TrueLit
            }
            'F' => {
                i += 1;
                TokenKind::FalseLit
            }
            'U' => {
                i += 1;
                TokenKind::Until
            }
            'X' => {
                if bytes.get(i + 1) == Some(&b'_') && bytes.get(i + 2) == Some(&b'{') {
                    i += 3;
                    TokenKind::NextOpen
                } else {
                    return Err(SyntaxError::new(start, "expected '_{' after 'X'"));
                }
            }
            'a'..='z' => {
                i += 1;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                TokenKind::Ident
            }
            '0'..='9' => {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len()
                    && bytes[i] == b'.'
                    && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)
                {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                TokenKind::Number
            }
            '[' => {
                i += 1;
                TokenKind::LBracket
            }
            ']' => {
                i += 1;
                TokenKind::RBracket
            }
            '(' => {
                i += 1;
                TokenKind::LParen
            }
            ')' => {
                i += 1;
                TokenKind::RParen
            }
            '}' => {
                i += 1;
                TokenKind::RBrace
            }
            ',' => {
                i += 1;
                TokenKind::Comma
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    TokenKind::Le
                } else {
                    i += 1;
                    TokenKind::Lt
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    TokenKind::Ge
                } else {
                    i += 1;
                    TokenKind::Gt
                }
            }
            '!' => {
                i += 1;
                TokenKind::Not
            }
            '&' => {
                i += 1;
                TokenKind::And
            }
            '|' => {
                i += 1;
                TokenKind::Or
            }
            other => {
                return Err(SyntaxError::new(
                    start,
                    format!("unknown character '{other}'"),
                ));
            }
        };
        tokens.push(Token {
            kind,
            lexeme: text[start..i].to_owned(),
            pos: start,
        });
    }
    Ok(tokens)
}
