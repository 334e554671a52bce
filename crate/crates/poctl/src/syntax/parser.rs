//! Recursive-descent parser for POCTL* state formulas.
//!
//! Binding strength, tightest first: `!` and `X_{..}`, then `U`/`U<=n`
//! (right-associative), then `&`, then `|`. Boolean connectives inside a
//! probability operator parse as path-level nodes; `T`, `F`, atoms and
//! nested `P[..](..)` embed as state-formula leaves.

use std::collections::BTreeSet;

use super::ast::{PathFormula, ProbBound, StateFormula};
use super::lexer::{tokenize, SyntaxError, Token, TokenKind};
use crate::model::AtomicProp;

/// Parse a complete state formula from a token stream produced by
/// [`tokenize`]. The whole stream must be consumed.
pub fn parse_state_formula(tokens: &[Token]) -> Result<StateFormula, SyntaxError> {
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: tokens.last().map_or(0, |t| t.pos + t.lexeme.len()),
    };
    let formula = parser.state_or()?;
    if let Some(tok) = parser.peek() {
        return Err(SyntaxError::new(
            tok.pos,
            format!("expected end of input, found {}", tok.kind),
        ));
    }
    Ok(formula)
}

/// Tokenise and parse in one step.
pub fn parse_formula(text: &str) -> Result<StateFormula, SyntaxError> {
    let tokens = tokenize(text)?;
    parse_state_formula(&tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<&TokenKind> {
        self.peek().map(|t| &t.kind)
    }

    fn advance(&mut self) -> Option<&'a Token> {
        let tok = self.tokens.get(self.pos);
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn eat(&mut self, kind: TokenKind) -> bool {
        if self.peek_kind() == Some(&kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<&'a Token, SyntaxError> {
        match self.peek() {
            Some(tok) if tok.kind == kind => {
                self.pos += 1;
                Ok(tok)
            }
            Some(tok) => Err(SyntaxError::new(
                tok.pos,
                format!("expected {kind}, found {}", tok.kind),
            )),
            None => Err(SyntaxError::new(
                self.end,
                format!("expected {kind}, found end of input"),
            )),
        }
    }

    fn unexpected(&self, what: &str) -> SyntaxError {
        match self.peek() {
            Some(tok) => SyntaxError::new(
                tok.pos,
                format!("expected {what}, found {}", tok.kind),
            ),
            None => SyntaxError::new(self.end, format!("expected {what}, found end of input")),
        }
    }

    fn state_or(&mut self) -> Result<StateFormula, SyntaxError> {
        let mut formula = self.state_and()?;
        while self.eat(TokenKind::Or) {
            let rhs = self.state_and()?;
            formula = StateFormula::or(formula, rhs);
        }
        Ok(formula)
    }

    fn state_and(&mut self) -> Result<StateFormula, SyntaxError> {
        let mut formula = self.state_unary()?;
        while self.eat(TokenKind::And) {
            let rhs = self.state_unary()?;
            formula = StateFormula::and(formula, rhs);
        }
        Ok(formula)
    }

    fn state_unary(&mut self) -> Result<StateFormula, SyntaxError> {
        if self.eat(TokenKind::Not) {
            return Ok(StateFormula::not(self.state_unary()?));
        }
        self.state_primary()
    }

    fn state_primary(&mut self) -> Result<StateFormula, SyntaxError> {
        match self.peek_kind() {
            Some(TokenKind::TrueLit) => {
                self.advance();
                Ok(StateFormula::True)
            }
            Some(TokenKind::FalseLit) => {
                self.advance();
                Ok(StateFormula::False)
            }
            Some(TokenKind::Ident) => {
                let tok = self.advance().expect("peeked");
                Ok(StateFormula::Atom(AtomicProp::Named(tok.lexeme.clone())))
            }
            Some(TokenKind::ProbOp) => self.probability(),
            Some(TokenKind::LParen) => {
                self.advance();
                let inner = self.state_or()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            _ => Err(self.unexpected("a state formula")),
        }
    }

    fn probability(&mut self) -> Result<StateFormula, SyntaxError> {
        self.expect(TokenKind::ProbOp)?;
        self.expect(TokenKind::LBracket)?;
        let bound = match self.peek_kind() {
            Some(TokenKind::Lt) => ProbBound::Lt,
            Some(TokenKind::Le) => ProbBound::Le,
            Some(TokenKind::Gt) => ProbBound::Gt,
            Some(TokenKind::Ge) => ProbBound::Ge,
            _ => return Err(self.unexpected("a probability bound ('<', '<=', '>' or '>=')")),
        };
        self.advance();
        let p_tok = self.expect(TokenKind::Number)?;
        let p: f64 = p_tok
            .lexeme
            .parse()
            .map_err(|_| SyntaxError::new(p_tok.pos, "invalid number".to_owned()))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(SyntaxError::new(
                p_tok.pos,
                "probability bound must be in [0,1]".to_owned(),
            ));
        }
        self.expect(TokenKind::RBracket)?;
        self.expect(TokenKind::LParen)?;
        let body = self.path_or()?;
        self.expect(TokenKind::RParen)?;
        Ok(StateFormula::prob(bound, p, body))
    }

    fn path_or(&mut self) -> Result<PathFormula, SyntaxError> {
        let mut formula = self.path_and()?;
        while self.eat(TokenKind::Or) {
            let rhs = self.path_and()?;
            formula = PathFormula::or(formula, rhs);
        }
        Ok(formula)
    }

    fn path_and(&mut self) -> Result<PathFormula, SyntaxError> {
        let mut formula = self.path_until()?;
        while self.eat(TokenKind::And) {
            let rhs = self.path_until()?;
            formula = PathFormula::and(formula, rhs);
        }
        Ok(formula)
    }

    fn path_until(&mut self) -> Result<PathFormula, SyntaxError> {
        let lhs = self.path_unary()?;
        if !self.eat(TokenKind::Until) {
            return Ok(lhs);
        }
        if self.eat(TokenKind::Le) {
            let n_tok = self.expect(TokenKind::Number)?;
            if n_tok.lexeme.contains('.') {
                return Err(SyntaxError::new(
                    n_tok.pos,
                    "until bound must be a nonnegative integer".to_owned(),
                ));
            }
            let n: u32 = n_tok.lexeme.parse().map_err(|_| {
                SyntaxError::new(n_tok.pos, "until bound must be a nonnegative integer".to_owned())
            })?;
            let rhs = self.path_until()?;
            Ok(PathFormula::bounded_until(lhs, n, rhs))
        } else {
            let rhs = self.path_until()?;
            Ok(PathFormula::until(lhs, rhs))
        }
    }

    fn path_unary(&mut self) -> Result<PathFormula, SyntaxError> {
        if self.eat(TokenKind::Not) {
            return Ok(PathFormula::not(self.path_unary()?));
        }
        if self.peek_kind() == Some(&TokenKind::NextOpen) {
            self.advance();
            let obs = self.observation_set()?;
            self.expect(TokenKind::RBrace)?;
            let body = self.path_unary()?;
            return Ok(PathFormula::NextObs(obs, Box::new(body)));
        }
        self.path_primary()
    }

    fn observation_set(&mut self) -> Result<BTreeSet<usize>, SyntaxError> {
        let mut obs = BTreeSet::new();
        loop {
            let tok = match self.peek() {
                Some(t) if t.kind == TokenKind::Number => self.advance().expect("peeked"),
                _ => return Err(self.unexpected("an observation index")),
            };
            if tok.lexeme.contains('.') {
                return Err(SyntaxError::new(
                    tok.pos,
                    "observation index must be an integer".to_owned(),
                ));
            }
            let index: usize = tok
                .lexeme
                .parse()
                .map_err(|_| SyntaxError::new(tok.pos, "invalid observation index".to_owned()))?;
            obs.insert(index);
            if !self.eat(TokenKind::Comma) {
                return Ok(obs);
            }
        }
    }

    fn path_primary(&mut self) -> Result<PathFormula, SyntaxError> {
        match self.peek_kind() {
            Some(TokenKind::TrueLit) => {
                self.advance();
                Ok(PathFormula::state(StateFormula::True))
            }
            Some(TokenKind::FalseLit) => {
                self.advance();
                Ok(PathFormula::state(StateFormula::False))
            }
            Some(TokenKind::Ident) => {
                let tok = self.advance().expect("peeked");
                Ok(PathFormula::state(StateFormula::Atom(AtomicProp::Named(
                    tok.lexeme.clone(),
                ))))
            }
            Some(TokenKind::ProbOp) => Ok(PathFormula::state(self.probability()?)),
            Some(TokenKind::LParen) => {
                self.advance();
                let inner = self.path_or()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            _ => Err(self.unexpected("a path formula")),
        }
    }
}
