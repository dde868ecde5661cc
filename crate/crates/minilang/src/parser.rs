//! Recursive-descent parser.

use thiserror::Error;

use crate::ast::{BinOp, Expr, Program, Stmt, UnOp};
use crate::lexer::{lex_with_positions, Lexeme, TokenClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at line {line}, column {col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    /// Token kinds that would have been accepted at this position.
    pub expected: Vec<String>,
}

pub fn parse(source: &str) -> Result<Program, SyntaxError> {
    let lexemes = lex_with_positions(source).map_err(|e| SyntaxError {
        line: e.line,
        col: e.col,
        message: e.message,
        expected: Vec::new(),
    })?;
    let eof = end_position(source);
    let mut p = Parser {
        toks: lexemes,
        pos: 0,
        eof,
        loop_depth: 0,
        in_function: false,
    };
    let mut body = Vec::new();
    while !p.at_end() {
        body.push(p.statement(true)?);
    }
    Ok(Program { body })
}

pub fn parse_expr(source: &str) -> Result<Expr, SyntaxError> {
    let lexemes = lex_with_positions(source).map_err(|e| SyntaxError {
        line: e.line,
        col: e.col,
        message: e.message,
        expected: Vec::new(),
    })?;
    let mut p = Parser {
        toks: lexemes,
        pos: 0,
        eof: end_position(source),
        loop_depth: 0,
        in_function: false,
    };
    let e = p.expr()?;
    if !p.at_end() {
        return Err(p.error("end of input", &["end of input"]));
    }
    Ok(e)
}

fn end_position(source: &str) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for c in source.chars() {
        if c == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

struct Parser {
    toks: Vec<Lexeme>,
    pos: usize,
    eof: (usize, usize),
    loop_depth: usize,
    in_function: bool,
}

impl Parser {
    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self) -> Option<&Lexeme> {
        self.toks.get(self.pos)
    }

    fn peek_is(&self, text: &str) -> bool {
        self.peek().is_some_and(|l| l.token.text == text)
    }

    fn peek_at_is(&self, offset: usize, text: &str) -> bool {
        self.toks
            .get(self.pos + offset)
            .is_some_and(|l| l.token.text == text)
    }

    fn error(&self, what: &str, expected: &[&str]) -> SyntaxError {
        let (line, col, found) = match self.peek() {
            Some(l) => (l.line, l.col, format!("'{}'", l.token.text)),
            None => (self.eof.0, self.eof.1, "end of input".to_string()),
        };
        SyntaxError {
            line,
            col,
            message: format!("expected {what}, found {found}"),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn error_here(&self, message: String) -> SyntaxError {
        let (line, col) = match self.peek() {
            Some(l) => (l.line, l.col),
            None => self.eof,
        };
        SyntaxError {
            line,
            col,
            message,
            expected: Vec::new(),
        }
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.peek_is(text) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, text: &str) -> Result<(), SyntaxError> {
        if self.eat(text) {
            Ok(())
        } else {
            Err(self.error(&format!("'{text}'"), &[text]))
        }
    }

    fn identifier(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(l) if l.token.klass == TokenClass::Identifier => {
                let name = l.token.text.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.error("identifier", &["identifier"])),
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        self.expect("{")?;
        let mut body = Vec::new();
        while !self.peek_is("}") {
            if self.at_end() {
                return Err(self.error("'}'", &["}", "statement"]));
            }
            body.push(self.statement(false)?);
        }
        self.pos += 1;
        Ok(body)
    }

    fn statement(&mut self, top_level: bool) -> Result<Stmt, SyntaxError> {
        let Some(head) = self.peek() else {
            return Err(self.error("statement", &["statement"]));
        };
        let head = head.token.clone();
        match (head.klass, head.text.as_str()) {
            (TokenClass::Keyword, "let") => {
                self.pos += 1;
                let name = self.identifier()?;
                self.expect("=")?;
                let value = self.expr()?;
                self.expect(";")?;
                Ok(Stmt::Let(name, value))
            }
            (TokenClass::Keyword, "if") => self.if_statement(),
            (TokenClass::Keyword, "while") => {
                self.pos += 1;
                self.expect("(")?;
                let cond = self.expr()?;
                self.expect(")")?;
                let body = self.loop_body()?;
                Ok(Stmt::While(cond, body))
            }
            (TokenClass::Keyword, "for") => {
                self.pos += 1;
                let var = self.identifier()?;
                self.expect("in")?;
                self.expect("range")?;
                self.expect("(")?;
                let first = self.expr()?;
                let (start, end) = if self.eat(",") {
                    (Some(first), self.expr()?)
                } else {
                    (None, first)
                };
                self.expect(")")?;
                let body = self.loop_body()?;
                Ok(Stmt::For {
                    var,
                    start,
                    end,
                    body,
                })
            }
            (TokenClass::Keyword, "print") => {
                self.pos += 1;
                self.expect("(")?;
                let e = self.expr()?;
                self.expect(")")?;
                self.expect(";")?;
                Ok(Stmt::Print(e))
            }
            (TokenClass::Keyword, "def") => {
                if !top_level {
                    return Err(self.error_here(
                        "function definitions are only allowed at top level".into(),
                    ));
                }
                self.pos += 1;
                let name = self.identifier()?;
                self.expect("(")?;
                let mut params = Vec::new();
                if !self.peek_is(")") {
                    loop {
                        params.push(self.identifier()?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                }
                self.expect(")")?;
                let saved = (self.loop_depth, self.in_function);
                self.loop_depth = 0;
                self.in_function = true;
                let body = self.block();
                (self.loop_depth, self.in_function) = saved;
                Ok(Stmt::Def {
                    name,
                    params,
                    body: body?,
                })
            }
            (TokenClass::Keyword, "return") => {
                if !self.in_function {
                    return Err(self.error_here("'return' outside of a function".into()));
                }
                self.pos += 1;
                if self.eat(";") {
                    return Ok(Stmt::Return(None));
                }
                let e = self.expr()?;
                self.expect(";")?;
                Ok(Stmt::Return(Some(e)))
            }
            (TokenClass::Keyword, "break") => {
                if self.loop_depth == 0 {
                    return Err(self.error_here("'break' outside of a loop".into()));
                }
                self.pos += 1;
                self.expect(";")?;
                Ok(Stmt::Break)
            }
            (TokenClass::Identifier, _) if self.peek_at_is(1, "=") => {
                let name = self.identifier()?;
                self.pos += 1;
                let value = self.expr()?;
                self.expect(";")?;
                Ok(Stmt::Assign(name, value))
            }
            _ => {
                let e = self.expr()?;
                if self.peek_is("=") {
                    return match e {
                        Expr::Index(base, idx) => match *base {
                            Expr::Var(name) => {
                                self.pos += 1;
                                let value = self.expr()?;
                                self.expect(";")?;
                                Ok(Stmt::AssignIndex(name, *idx, value))
                            }
                            _ => Err(self.error_here("invalid assignment target".into())),
                        },
                        _ => Err(self.error_here("invalid assignment target".into())),
                    };
                }
                self.expect(";")?;
                Ok(Stmt::Expr(e))
            }
        }
    }

    fn loop_body(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        self.loop_depth += 1;
        let body = self.block();
        self.loop_depth -= 1;
        body
    }

    fn if_statement(&mut self) -> Result<Stmt, SyntaxError> {
        self.expect("if")?;
        self.expect("(")?;
        let cond = self.expr()?;
        self.expect(")")?;
        let then = self.block()?;
        let otherwise = if self.eat("else") {
            if self.peek_is("if") {
                Some(vec![self.if_statement()?])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(Stmt::If(cond, then, otherwise))
    }

    pub fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(l) if l.token.klass == TokenClass::Operator => {
                    match BinOp::from_symbol(&l.token.text) {
                        Some(op) if op.precedence() >= min_prec => op,
                        _ => break,
                    }
                }
                _ => break,
            };
            self.pos += 1;
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat("-") {
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat("!") {
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        let mut e = self.primary()?;
        while self.eat("[") {
            let idx = self.expr()?;
            self.expect("]")?;
            e = Expr::index(e, idx);
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        const EXPR: &[&str] = &["integer", "identifier", "true", "false", "(", "["];
        let Some(l) = self.peek() else {
            return Err(self.error("expression", EXPR));
        };
        let tok = l.token.clone();
        match tok.klass {
            TokenClass::Number => {
                self.pos += 1;
                let v = tok
                    .text
                    .parse::<i64>()
                    .map_err(|_| self.error_here(format!("bad integer {}", tok.text)))?;
                Ok(Expr::Int(v))
            }
            TokenClass::Keyword if tok.text == "true" || tok.text == "false" => {
                self.pos += 1;
                Ok(Expr::Bool(tok.text == "true"))
            }
            TokenClass::Identifier => {
                self.pos += 1;
                if self.eat("(") {
                    let mut args = Vec::new();
                    if !self.peek_is(")") {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat(",") {
                                break;
                            }
                        }
                    }
                    self.expect(")")?;
                    Ok(Expr::Call(tok.text, args))
                } else {
                    Ok(Expr::Var(tok.text))
                }
            }
            TokenClass::Delimiter if tok.text == "(" => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            TokenClass::Delimiter if tok.text == "[" => {
                self.pos += 1;
                let mut items = Vec::new();
                if !self.peek_is("]") {
                    loop {
                        items.push(self.expr()?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                }
                self.expect("]")?;
                Ok(Expr::Array(items))
            }
            TokenClass::StringLit => {
                Err(self.error_here("string literals are not values in MiniLang".into()))
            }
            _ => Err(self.error("expression", EXPR)),
        }
    }
}
