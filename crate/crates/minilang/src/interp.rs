//! Step-counting tree-walking interpreter.
//!
//! Cost model: every expression node costs 1 step and every statement
//! dispatch costs 1. Builtin calls replace the node cost with their own:
//! `len`, `push` and two-argument `min`/`max` cost 1; `sum`, one-argument
//! `min`/`max` and `range(n)` cost the number of elements touched;
//! `contains` costs the 1-based scan position of the first hit (the array
//! length on a miss); `sorted` costs `ceil(n * log2(max(n, 2)))`;
//! `contains_sorted` costs `ceil(log2(n + 1))`. Every builtin call costs at
//! least 1. A `for` loop pays 1 per iteration for advancing its variable.

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::ast::{BinOp, Expr, Program, Stmt, UnOp};

pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;
pub const MAX_CALL_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("undefined variable '{0}'")]
    UndefinedVariable(String),
    #[error("undefined function '{0}'")]
    UndefinedFunction(String),
    #[error("'{name}' expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of bounds for array of length {len}")]
    IndexOutOfBounds { index: i64, len: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("type error: {0}")]
    Type(String),
    #[error("call depth exceeds {MAX_CALL_DEPTH}")]
    RecursionLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub output: Vec<i64>,
    pub steps: u64,
    /// False when the step limit stopped execution.
    pub terminated: bool,
    pub error: Option<RuntimeError>,
}

impl ExecResult {
    /// Ran to completion without a runtime error.
    pub fn ok(&self) -> bool {
        self.terminated && self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Value {
    Int(i64),
    Bool(bool),
    Array(Rc<Vec<i64>>),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Bool(_) => "bool",
            Value::Array(_) => "array",
        }
    }
}

enum Stop {
    Error(RuntimeError),
    Limit,
}

impl From<RuntimeError> for Stop {
    fn from(e: RuntimeError) -> Self {
        Stop::Error(e)
    }
}

enum Flow {
    Normal,
    Break,
    Return(Value),
}

type Exec<T> = Result<T, Stop>;

struct Function<'a> {
    params: &'a [String],
    body: &'a [Stmt],
}

struct Interp<'a> {
    steps: u64,
    limit: u64,
    output: Vec<i64>,
    functions: HashMap<&'a str, Function<'a>>,
    /// Call frames, each a stack of block scopes. Frame 0, scope 0 holds
    /// globals, which are visible from every frame.
    frames: Vec<Vec<HashMap<String, Value>>>,
}

pub fn interpret(program: &Program, step_limit: u64) -> ExecResult {
    let mut it = Interp {
        steps: 0,
        limit: step_limit,
        output: Vec::new(),
        functions: HashMap::new(),
        frames: vec![vec![HashMap::new()]],
    };
    let outcome = it.block_in_scope(&program.body, false);
    let (terminated, error) = match outcome {
        Ok(_) => (true, None),
        Err(Stop::Limit) => (false, None),
        Err(Stop::Error(e)) => (true, Some(e)),
    };
    ExecResult {
        output: it.output,
        steps: it.steps,
        terminated,
        error,
    }
}

/// Parses and runs `source` with the default step limit.
pub fn run_source(source: &str) -> Result<ExecResult, crate::parser::SyntaxError> {
    Ok(interpret(&crate::parser::parse(source)?, DEFAULT_STEP_LIMIT))
}

fn ceil_log2(x: f64) -> u64 {
    x.log2().ceil() as u64
}

pub fn sorted_cost(n: usize) -> u64 {
    let n = n as f64;
    (n * n.max(2.0).log2()).ceil() as u64
}

pub fn contains_sorted_cost(n: usize) -> u64 {
    ceil_log2(n as f64 + 1.0)
}

impl<'a> Interp<'a> {
    fn charge(&mut self, n: u64) -> Exec<()> {
        if self.steps + n > self.limit {
            self.steps = self.limit;
            return Err(Stop::Limit);
        }
        self.steps += n;
        Ok(())
    }

    fn frame(&mut self) -> &mut Vec<HashMap<String, Value>> {
        self.frames.last_mut().expect("frame")
    }

    fn lookup(&self, name: &str) -> Option<&Value> {
        let frame = self.frames.last().expect("frame");
        for scope in frame.iter().rev() {
            if let Some(v) = scope.get(name) {
                return Some(v);
            }
        }
        if self.frames.len() > 1 {
            return self.frames[0][0].get(name);
        }
        None
    }

    fn lookup_mut(&mut self, name: &str) -> Option<&mut Value> {
        let depth = self.frames.len();
        let found_local = self.frames[depth - 1]
            .iter()
            .rposition(|s| s.contains_key(name));
        match found_local {
            Some(i) => self.frames[depth - 1][i].get_mut(name),
            None if depth > 1 => self.frames[0][0].get_mut(name),
            None => None,
        }
    }

    fn block_in_scope(&mut self, stmts: &'a [Stmt], new_scope: bool) -> Exec<Flow> {
        if new_scope {
            self.frame().push(HashMap::new());
        }
        let mut flow = Ok(Flow::Normal);
        for s in stmts {
            match self.stmt(s) {
                Ok(Flow::Normal) => {}
                other => {
                    flow = other;
                    break;
                }
            }
        }
        if new_scope {
            self.frame().pop();
        }
        flow
    }

    fn stmt(&mut self, s: &'a Stmt) -> Exec<Flow> {
        self.charge(1)?;
        match s {
            Stmt::Let(name, e) => {
                let v = self.expr(e)?;
                self.frame()
                    .last_mut()
                    .expect("scope")
                    .insert(name.clone(), v);
            }
            Stmt::Assign(name, e) => {
                let v = self.expr(e)?;
                match self.lookup_mut(name) {
                    Some(slot) => *slot = v,
                    None => return Err(RuntimeError::UndefinedVariable(name.clone()).into()),
                }
            }
            Stmt::AssignIndex(name, idx, e) => {
                let i = self.int(idx)?;
                let v = self.int(e)?;
                let slot = self
                    .lookup_mut(name)
                    .ok_or_else(|| RuntimeError::UndefinedVariable(name.clone()))?;
                let Value::Array(arr) = slot else {
                    return Err(RuntimeError::Type(format!("cannot index {}", slot.type_name())).into());
                };
                let len = arr.len();
                let pos = checked_index(i, len)?;
                Rc::make_mut(arr)[pos] = v;
            }
            Stmt::If(cond, then, otherwise) => {
                if self.boolean(cond)? {
                    return self.block_in_scope(then, true);
                } else if let Some(other) = otherwise {
                    return self.block_in_scope(other, true);
                }
            }
            Stmt::While(cond, body) => {
                while self.boolean(cond)? {
                    match self.block_in_scope(body, true)? {
                        Flow::Normal => {}
                        Flow::Break => break,
                        ret @ Flow::Return(_) => return Ok(ret),
                    }
                }
            }
            Stmt::For {
                var,
                start,
                end,
                body,
            } => {
                let lo = match start {
                    Some(e) => self.int(e)?,
                    None => 0,
                };
                let hi = self.int(end)?;
                let mut i = lo;
                while i < hi {
                    self.charge(1)?;
                    let mut scope = HashMap::new();
                    scope.insert(var.clone(), Value::Int(i));
                    self.frame().push(scope);
                    let flow = self.block_in_scope(body, false);
                    self.frame().pop();
                    match flow? {
                        Flow::Normal => {}
                        Flow::Break => break,
                        ret @ Flow::Return(_) => return Ok(ret),
                    }
                    i += 1;
                }
            }
            Stmt::Print(e) => {
                let v = match self.expr(e)? {
                    Value::Int(i) => i,
                    Value::Bool(b) => b as i64,
                    Value::Array(_) => {
                        return Err(RuntimeError::Type("cannot print an array".into()).into())
                    }
                };
                self.output.push(v);
            }
            Stmt::Def { name, params, body } => {
                self.functions
                    .insert(name.as_str(), Function { params, body });
            }
            Stmt::Return(e) => {
                let v = match e {
                    Some(e) => self.expr(e)?,
                    None => Value::Int(0),
                };
                return Ok(Flow::Return(v));
            }
            Stmt::Break => return Ok(Flow::Break),
            Stmt::Expr(e) => {
                self.expr(e)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn int(&mut self, e: &'a Expr) -> Exec<i64> {
        match self.expr(e)? {
            Value::Int(i) => Ok(i),
            v => Err(RuntimeError::Type(format!("expected int, found {}", v.type_name())).into()),
        }
    }

    fn boolean(&mut self, e: &'a Expr) -> Exec<bool> {
        match self.expr(e)? {
            Value::Bool(b) => Ok(b),
            v => Err(RuntimeError::Type(format!("expected bool, found {}", v.type_name())).into()),
        }
    }

    fn array(&mut self, e: &'a Expr) -> Exec<Rc<Vec<i64>>> {
        match self.expr(e)? {
            Value::Array(a) => Ok(a),
            v => Err(RuntimeError::Type(format!("expected array, found {}", v.type_name())).into()),
        }
    }

    fn expr(&mut self, e: &'a Expr) -> Exec<Value> {
        match e {
            Expr::Int(i) => {
                self.charge(1)?;
                Ok(Value::Int(*i))
            }
            Expr::Bool(b) => {
                self.charge(1)?;
                Ok(Value::Bool(*b))
            }
            Expr::Array(items) => {
                self.charge(1)?;
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(self.int(item)?);
                }
                Ok(Value::Array(Rc::new(out)))
            }
            Expr::Var(name) => {
                self.charge(1)?;
                self.lookup(name)
                    .cloned()
                    .ok_or_else(|| RuntimeError::UndefinedVariable(name.clone()).into())
            }
            Expr::Unary(op, inner) => {
                self.charge(1)?;
                match (op, self.expr(inner)?) {
                    (UnOp::Neg, Value::Int(i)) => {
                        Ok(Value::Int(i.checked_neg().ok_or(RuntimeError::Overflow)?))
                    }
                    (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (_, v) => Err(RuntimeError::Type(format!(
                        "bad operand {} for unary operator",
                        v.type_name()
                    ))
                    .into()),
                }
            }
            Expr::Binary(op, l, r) => {
                self.charge(1)?;
                self.binary(*op, l, r)
            }
            Expr::Index(base, idx) => {
                self.charge(1)?;
                let arr = self.array(base)?;
                let i = self.int(idx)?;
                Ok(Value::Int(arr[checked_index(i, arr.len())?]))
            }
            Expr::Call(name, args) => self.call(name, args),
        }
    }

    fn binary(&mut self, op: BinOp, l: &'a Expr, r: &'a Expr) -> Exec<Value> {
        match op {
            BinOp::And => {
                let a = self.boolean(l)?;
                return Ok(Value::Bool(a && self.boolean(r)?));
            }
            BinOp::Or => {
                let a = self.boolean(l)?;
                return Ok(Value::Bool(a || self.boolean(r)?));
            }
            _ => {}
        }
        let a = self.expr(l)?;
        let b = self.expr(r)?;
        let (x, y) = match (&a, &b) {
            (Value::Int(x), Value::Int(y)) => (*x, *y),
            (Value::Bool(x), Value::Bool(y)) if matches!(op, BinOp::Eq | BinOp::Ne) => {
                return Ok(Value::Bool((x == y) == (op == BinOp::Eq)));
            }
            _ => {
                return Err(RuntimeError::Type(format!(
                    "bad operands {} {} {}",
                    a.type_name(),
                    op.symbol(),
                    b.type_name()
                ))
                .into())
            }
        };
        let overflow = || Stop::Error(RuntimeError::Overflow);
        Ok(match op {
            BinOp::Add => Value::Int(x.checked_add(y).ok_or_else(overflow)?),
            BinOp::Sub => Value::Int(x.checked_sub(y).ok_or_else(overflow)?),
            BinOp::Mul => Value::Int(x.checked_mul(y).ok_or_else(overflow)?),
            BinOp::Div | BinOp::Mod => {
                if y == 0 {
                    return Err(RuntimeError::DivisionByZero.into());
                }
                let v = if op == BinOp::Div {
                    x.checked_div(y)
                } else {
                    x.checked_rem(y)
                };
                Value::Int(v.ok_or_else(overflow)?)
            }
            BinOp::Lt => Value::Bool(x < y),
            BinOp::Le => Value::Bool(x <= y),
            BinOp::Gt => Value::Bool(x > y),
            BinOp::Ge => Value::Bool(x >= y),
            BinOp::Eq => Value::Bool(x == y),
            BinOp::Ne => Value::Bool(x != y),
            BinOp::And | BinOp::Or => unreachable!("handled above"),
        })
    }

    fn call(&mut self, name: &'a str, args: &'a [Expr]) -> Exec<Value> {
        let arity = |expected: usize| -> Exec<()> {
            if args.len() == expected {
                Ok(())
            } else {
                Err(RuntimeError::Arity {
                    name: name.to_string(),
                    expected,
                    got: args.len(),
                }
                .into())
            }
        };
        match name {
            "len" => {
                arity(1)?;
                let a = self.array(&args[0])?;
                self.charge(1)?;
                Ok(Value::Int(a.len() as i64))
            }
            "push" => {
                arity(2)?;
                let Expr::Var(target) = &args[0] else {
                    return Err(RuntimeError::Type("push needs a variable".into()).into());
                };
                self.charge(1)?;
                let v = self.int(&args[1])?;
                self.charge(1)?;
                let slot = self
                    .lookup_mut(target)
                    .ok_or_else(|| RuntimeError::UndefinedVariable(target.clone()))?;
                let Value::Array(arr) = slot else {
                    return Err(RuntimeError::Type("push needs an array".into()).into());
                };
                let arr = Rc::make_mut(arr);
                arr.push(v);
                Ok(Value::Int(arr.len() as i64))
            }
            "sum" => {
                arity(1)?;
                let a = self.array(&args[0])?;
                self.charge((a.len() as u64).max(1))?;
                let mut s: i64 = 0;
                for &x in a.iter() {
                    s = s.checked_add(x).ok_or(RuntimeError::Overflow)?;
                }
                Ok(Value::Int(s))
            }
            "sorted" => {
                arity(1)?;
                let a = self.array(&args[0])?;
                self.charge(sorted_cost(a.len()).max(1))?;
                let mut v = a.as_ref().clone();
                v.sort_unstable();
                Ok(Value::Array(Rc::new(v)))
            }
            "contains" => {
                arity(2)?;
                let a = self.array(&args[0])?;
                let x = self.int(&args[1])?;
                let pos = a.iter().position(|&v| v == x);
                let cost = pos.map_or(a.len(), |p| p + 1) as u64;
                self.charge(cost.max(1))?;
                Ok(Value::Bool(pos.is_some()))
            }
            "contains_sorted" => {
                arity(2)?;
                let a = self.array(&args[0])?;
                let x = self.int(&args[1])?;
                self.charge(contains_sorted_cost(a.len()).max(1))?;
                Ok(Value::Bool(a.binary_search(&x).is_ok()))
            }
            "min" | "max" => {
                let want_max = name == "max";
                if args.len() == 2 {
                    let x = self.int(&args[0])?;
                    let y = self.int(&args[1])?;
                    self.charge(1)?;
                    return Ok(Value::Int(if want_max { x.max(y) } else { x.min(y) }));
                }
                arity(1)?;
                let a = self.array(&args[0])?;
                self.charge((a.len() as u64).max(1))?;
                let v = if want_max {
                    a.iter().max()
                } else {
                    a.iter().min()
                };
                v.map(|&v| Value::Int(v))
                    .ok_or_else(|| RuntimeError::Type(format!("{name} of empty array")).into())
            }
            "range" => {
                let (lo, hi) = match args.len() {
                    1 => (0, self.int(&args[0])?),
                    2 => (self.int(&args[0])?, self.int(&args[1])?),
                    _ => arity(1).map(|_| (0, 0))?,
                };
                let n = (hi - lo).max(0) as u64;
                self.charge(n.max(1))?;
                Ok(Value::Array(Rc::new((lo..hi).collect())))
            }
            _ => self.call_user(name, args),
        }
    }

    fn call_user(&mut self, name: &'a str, args: &'a [Expr]) -> Exec<Value> {
        self.charge(1)?;
        let (params, body) = match self.functions.get(name) {
            Some(f) => (f.params, f.body),
            None => return Err(RuntimeError::UndefinedFunction(name.to_string()).into()),
        };
        if params.len() != args.len() {
            return Err(RuntimeError::Arity {
                name: name.to_string(),
                expected: params.len(),
                got: args.len(),
            }
            .into());
        }
        if self.frames.len() > MAX_CALL_DEPTH {
            return Err(RuntimeError::RecursionLimit.into());
        }
        let mut scope = HashMap::new();
        for (p, a) in params.iter().zip(args) {
            let v = self.expr(a)?;
            scope.insert(p.clone(), v);
        }
        self.frames.push(vec![scope]);
        let flow = self.block_in_scope(body, false);
        self.frames.pop();
        match flow? {
            Flow::Return(v) => Ok(v),
            _ => Ok(Value::Int(0)),
        }
    }
}

fn checked_index(i: i64, len: usize) -> Result<usize, RuntimeError> {
    if i < 0 || i as usize >= len {
        Err(RuntimeError::IndexOutOfBounds { index: i, len })
    } else {
        Ok(i as usize)
    }
}
