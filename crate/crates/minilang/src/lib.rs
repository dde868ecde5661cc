//! MiniLang: integers, booleans and integer arrays; a step-counting
//! interpreter that serves as the runtime oracle; and a corpus generator that
//! plants known slow/fast program families.

pub mod ast;
pub mod generator;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod pretty;

pub use ast::{BinOp, Expr, Program, Stmt, UnOp};
pub use generator::{generate_corpus, CorpusRecord, Family, GeneratorConfig};
pub use interp::{interpret, run_source, ExecResult, RuntimeError, DEFAULT_STEP_LIMIT};
pub use lexer::{lex, lex_with_positions, LexError, Lexeme, Token, TokenClass};
pub use parser::{parse, SyntaxError};
pub use pretty::pretty_print;
