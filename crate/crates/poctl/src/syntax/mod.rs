//! Lexing, parsing and rendering of formulas and model files.

pub mod ast;
pub mod lexer;
pub mod model_file;
pub mod parser;
pub mod render;

pub use ast::{PathFormula, ProbBound, StateFormula};
pub use lexer::{tokenize, SyntaxError, Token, TokenKind};
pub use model_file::{parse_model_file, ModelFileError};
pub use parser::{parse_formula, parse_state_formula};
pub use render::{render_formula, render_path_formula};
