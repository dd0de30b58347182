//! Parsing and type checking of the supported C subset.
//!
//! Everything downstream (the code generator and the plaintext oracle)
//! consumes the same [`typed::Program`], so both see identical desugaring,
//! evaluation order and conversions.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod printer;
pub mod typecheck;
pub mod typed;
pub mod types;

use std::fmt;

/// Source position. Positions never take part in equality so that trees
/// parsed from differently formatted text compare equal.
#[derive(Debug, Clone, Copy, Default, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Pos {
    fn eq(&self, _: &Pos) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub pos: Pos,
    pub message: String,
}

impl Diagnostic {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic {
            pos,
            message: message.into(),
        }
    }

    /// `file:line:col: message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}:{}: {}", self.pos.line, self.pos.col, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.pos.line, self.pos.col, self.message)
    }
}

impl std::error::Error for Diagnostic {}

/// Parses and type checks a translation unit.
pub fn compile_source(src: &str) -> Result<typed::Program, Diagnostic> {
    let unit = parser::parse(src)?;
    typecheck::typecheck(&unit)
}
