//! Tokenizer shared by the parser and the corpus pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KEYWORDS: &[&str] = &[
    "let", "if", "else", "while", "for", "in", "def", "return", "break", "print", "true", "false",
];

pub const BUILTINS: &[&str] = &[
    "len",
    "push",
    "sum",
    "sorted",
    "contains",
    "contains_sorted",
    "min",
    "max",
    "range",
];

const OPERATORS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "=", "+", "-", "*", "/", "%", "<", ">", "!",
];

const DELIMITERS: &[char] = &['(', ')', '{', '}', '[', ']', ',', ';'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenClass {
    Keyword,
    Identifier,
    Number,
    StringLit,
    Operator,
    Delimiter,
    Special,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub klass: TokenClass,
}

impl Token {
    pub fn new(text: impl Into<String>, klass: TokenClass) -> Self {
        Self {
            text: text.into(),
            klass,
        }
    }

    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }
}

/// A token with its 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexeme {
    pub token: Token,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lex error at line {line}, column {col}: {message}")]
pub struct LexError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

pub fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name)
}

/// Placeholders such as `STR_3` stand for string literals after
/// canonicalization and lex back into the string-literal class.
fn is_string_placeholder(word: &str) -> bool {
    word.strip_prefix("STR_")
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

fn classify_word(word: &str) -> TokenClass {
    if KEYWORDS.contains(&word) {
        TokenClass::Keyword
    } else if is_string_placeholder(word) {
        TokenClass::StringLit
    } else {
        TokenClass::Identifier
    }
}

pub fn lex(source: &str) -> Result<Vec<Token>, LexError> {
    Ok(lex_with_positions(source)?
        .into_iter()
        .map(|l| l.token)
        .collect())
}

pub fn lex_with_positions(source: &str) -> Result<Vec<Lexeme>, LexError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |c: char, line: &mut usize, col: &mut usize| {
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(c, &mut line, &mut col);
            i += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let start = i;
        let klass = if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && (chars[i].is_ascii_alphabetic() || chars[i] == '_') {
                return Err(LexError {
                    line,
                    col: col + (i - start),
                    message: format!("unexpected character {:?} after number", chars[i]),
                });
            }
            let text: String = chars[start..i].iter().collect();
            if text.parse::<i64>().is_err() {
                return Err(LexError {
                    line,
                    col,
                    message: format!("integer literal {text} out of range"),
                });
            }
            TokenClass::Number
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            classify_word(&text)
        } else if c == '"' {
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                if chars[i] == '\n' {
                    break;
                }
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            if i >= chars.len() || chars[i] != '"' {
                return Err(LexError {
                    line,
                    col,
                    message: "unterminated string literal".into(),
                });
            }
            i += 1;
            TokenClass::StringLit
        } else if DELIMITERS.contains(&c) {
            i += 1;
            TokenClass::Delimiter
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if two.chars().count() == 2 && OPERATORS.contains(&two.as_str()) {
                i += 2;
            } else if OPERATORS.contains(&c.to_string().as_str()) {
                i += 1;
            } else {
                return Err(LexError {
                    line,
                    col,
                    message: format!("unrecognized character {c:?}"),
                });
            }
            TokenClass::Operator
        };
        let text: String = chars[start..i].iter().collect();
        for &ch in &chars[start..i] {
            advance(ch, &mut line, &mut col);
        }
        out.push(Lexeme {
            token: Token { text, klass },
            line: start_line,
            col: start_col,
        });
    }
    Ok(out)
}

/// Joins token surface forms with single spaces.
pub fn join(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(src: &str) -> Vec<TokenClass> {
        lex(src).unwrap().into_iter().map(|t| t.klass).collect()
    }

    #[test]
    fn let_statement_classes() {
        use TokenClass::*;
        assert_eq!(
            classes("let x = 1;"),
            vec![Keyword, Identifier, Operator, Number, Delimiter]
        );
    }

    #[test]
    fn empty_and_comments() {
        assert!(lex("").unwrap().is_empty());
        assert!(lex("  # only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn builtin_call() {
        let toks = lex("contains_sorted(a, 5)").unwrap();
        assert_eq!(toks.len(), 6);
        assert_eq!(toks[0].klass, TokenClass::Identifier);
    }

    #[test]
    fn two_char_operators() {
        let toks = lex("a<=b&&!c").unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "<=", "b", "&&", "!", "c"]);
    }

    #[test]
    fn placeholders() {
        let toks = lex("STR_0 VAR_1 FUNC_2 STR_").unwrap();
        let k: Vec<_> = toks.iter().map(|t| t.klass).collect();
        use TokenClass::*;
        assert_eq!(k, vec![StringLit, Identifier, Identifier, Identifier]);
    }

    #[test]
    fn positions_and_errors() {
        let lx = lex_with_positions("let a\n  = 10;").unwrap();
        assert_eq!((lx[2].line, lx[2].col), (2, 3));
        let err = lex("let a = 1 @ 2;").unwrap_err();
        assert_eq!((err.line, err.col), (1, 11));
        assert!(lex("\"open").is_err());
        assert!(lex("99999999999999999999").is_err());
        assert!(lex("12ab").is_err());
    }

    #[test]
    fn strings_lex_as_one_token() {
        let toks = lex(r#"print("a b\"c");"#).unwrap();
        assert_eq!(toks[2].klass, TokenClass::StringLit);
        assert_eq!(toks[2].text, r#""a b\"c""#);
    }
}
