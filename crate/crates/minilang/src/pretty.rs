//! Canonical text rendering: one statement per line, two-space indent,
//! minimal parentheses.

use crate::ast::{Expr, Program, Stmt, UnOp};

pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    for s in &program.body {
        stmt(&mut out, s, 0);
    }
    out
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut out = String::new();
    expr(&mut out, e);
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn block(out: &mut String, body: &[Stmt], depth: usize) {
    out.push_str("{\n");
    for s in body {
        stmt(out, s, depth + 1);
    }
    indent(out, depth);
    out.push('}');
}

fn stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    stmt_body(out, s, depth);
    out.push('\n');
}

fn stmt_body(out: &mut String, s: &Stmt, depth: usize) {
    match s {
        Stmt::Let(name, e) => {
            out.push_str(&format!("let {name} = "));
            expr(out, e);
            out.push(';');
        }
        Stmt::Assign(name, e) => {
            out.push_str(&format!("{name} = "));
            expr(out, e);
            out.push(';');
        }
        Stmt::AssignIndex(name, idx, e) => {
            out.push_str(&format!("{name}["));
            expr(out, idx);
            out.push_str("] = ");
            expr(out, e);
            out.push(';');
        }
        Stmt::If(cond, then, otherwise) => {
            out.push_str("if (");
            expr(out, cond);
            out.push_str(") ");
            block(out, then, depth);
            match otherwise.as_deref() {
                None => {}
                Some([nested @ Stmt::If(..)]) => {
                    out.push_str(" else ");
                    stmt_body(out, nested, depth);
                }
                Some(other) => {
                    out.push_str(" else ");
                    block(out, other, depth);
                }
            }
        }
        Stmt::While(cond, body) => {
            out.push_str("while (");
            expr(out, cond);
            out.push_str(") ");
            block(out, body, depth);
        }
        Stmt::For {
            var,
            start,
            end,
            body,
        } => {
            out.push_str(&format!("for {var} in range("));
            if let Some(s) = start {
                expr(out, s);
                out.push_str(", ");
            }
            expr(out, end);
            out.push_str(") ");
            block(out, body, depth);
        }
        Stmt::Print(e) => {
            out.push_str("print(");
            expr(out, e);
            out.push_str(");");
        }
        Stmt::Def { name, params, body } => {
            out.push_str(&format!("def {name}({}) ", params.join(", ")));
            block(out, body, depth);
        }
        Stmt::Return(None) => out.push_str("return;"),
        Stmt::Return(Some(e)) => {
            out.push_str("return ");
            expr(out, e);
            out.push(';');
        }
        Stmt::Break => out.push_str("break;"),
        Stmt::Expr(e) => {
            expr(out, e);
            out.push(';');
        }
    }
}

fn list(out: &mut String, items: &[Expr]) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        expr(out, item);
    }
}

fn parenthesized(out: &mut String, e: &Expr, wrap: bool) {
    if wrap {
        out.push('(');
        expr(out, e);
        out.push(')');
    } else {
        expr(out, e);
    }
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Int(i) => out.push_str(&i.to_string()),
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Array(items) => {
            out.push('[');
            list(out, items);
            out.push(']');
        }
        Expr::Var(name) => out.push_str(name),
        Expr::Binary(op, l, r) => {
            let p = op.precedence();
            let left_wrap = matches!(&**l, Expr::Binary(lo, _, _) if lo.precedence() < p);
            let right_wrap = matches!(&**r, Expr::Binary(ro, _, _) if ro.precedence() <= p);
            parenthesized(out, l, left_wrap);
            out.push_str(&format!(" {} ", op.symbol()));
            parenthesized(out, r, right_wrap);
        }
        Expr::Unary(op, inner) => {
            out.push_str(match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            });
            parenthesized(out, inner, matches!(&**inner, Expr::Binary(..)));
        }
        Expr::Call(name, args) => {
            out.push_str(name);
            out.push('(');
            list(out, args);
            out.push(')');
        }
        Expr::Index(base, idx) => {
            parenthesized(out, base, matches!(&**base, Expr::Binary(..) | Expr::Unary(..)));
            out.push('[');
            expr(out, idx);
            out.push(']');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    #[test]
    fn single_let() {
        let p = Program {
            body: vec![Stmt::Let("x".into(), Expr::Int(1))],
        };
        assert_eq!(pretty_print(&p), "let x = 1;\n");
    }

    #[test]
    fn nested_blocks_indent() {
        let src = "def f(a, b) { for i in range(1, a) { if (i % 2 == 0) { print(i); } else if (b) { break; } else { return; } } return (a - b) * -(a + 1); }";
        let text = pretty_print(&parse(src).unwrap());
        let expected = "def f(a, b) {\n  for i in range(1, a) {\n    if (i % 2 == 0) {\n      print(i);\n    } else if (b) {\n      break;\n    } else {\n      return;\n    }\n  }\n  return (a - b) * -(a + 1);\n}\n";
        assert_eq!(text, expected);
        assert_eq!(parse(&text).unwrap(), parse(src).unwrap());
    }

    #[test]
    fn minimal_parentheses() {
        let p = parse("let x = (1 - (2 - 3)) - (4 * 5) + (a[0] < b);").unwrap();
        assert_eq!(pretty_print(&p), "let x = 1 - (2 - 3) - 4 * 5 + (a[0] < b);\n");
        let p = parse("let y = (-a)[0] + (b + c)[1];").unwrap();
        assert_eq!(pretty_print(&p), "let y = (-a)[0] + (b + c)[1];\n");
    }
}
