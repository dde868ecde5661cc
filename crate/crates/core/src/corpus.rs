//! Canonical token programs, vocabulary, corpus ingestion and statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use minilang::generator::CorpusRecord;
use minilang::lexer::{is_builtin, lex, LexError, Token, TokenClass};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const SPECIALS: [&str; 5] = ["<PAD>", "<BOS>", "<EOS>", "<UNK>", "<SEP>"];

/// Placeholder name to original surface form.
pub type CanonMap = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub question_id: String,
    pub solution_id: String,
    pub tokens: Vec<String>,
    pub runtime: f64,
    pub correct: bool,
    pub canon_map: CanonMap,
}

pub fn lex_source(source: &str) -> std::result::Result<Vec<Token>, LexError> {
    lex(source)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Placeholder {
    Var,
    Func,
    Str,
}

fn placeholder_kind(text: &str) -> Option<(Placeholder, usize)> {
    let (kind, rest) = if let Some(r) = text.strip_prefix("VAR_") {
        (Placeholder::Var, r)
    } else if let Some(r) = text.strip_prefix("FUNC_") {
        (Placeholder::Func, r)
    } else if let Some(r) = text.strip_prefix("STR_") {
        (Placeholder::Str, r)
    } else {
        return None;
    };
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok().map(|i| (kind, i))
}

pub fn is_placeholder(text: &str) -> bool {
    placeholder_kind(text).is_some()
}

/// Renames identifiers and string literals to positional placeholders.
///
/// Names that follow `def` anywhere in the sequence become `FUNC_i`; other
/// non-builtin identifiers become `VAR_i`; string literals become `STR_i`.
/// Each kind is numbered from 0 in order of first occurrence.
pub fn canonicalize(tokens: &[Token]) -> (Vec<Token>, CanonMap) {
    let functions: HashSet<&str> = tokens
        .windows(2)
        .filter(|w| w[0].klass == TokenClass::Keyword && w[0].text == "def")
        .filter(|w| w[1].klass == TokenClass::Identifier)
        .map(|w| w[1].text.as_str())
        .collect();
    let mut assigned: HashMap<(Placeholder, &str), String> = HashMap::new();
    let mut counters = [0usize; 3];
    let mut map = CanonMap::new();
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        let kind = match t.klass {
            TokenClass::Identifier if is_builtin(&t.text) => None,
            TokenClass::Identifier if functions.contains(t.text.as_str()) => Some(Placeholder::Func),
            TokenClass::Identifier => Some(Placeholder::Var),
            TokenClass::StringLit => Some(Placeholder::Str),
            _ => None,
        };
        let Some(kind) = kind else {
            out.push(t.clone());
            continue;
        };
        let name = assigned
            .entry((kind, t.text.as_str()))
            .or_insert_with(|| {
                let (prefix, slot) = match kind {
                    Placeholder::Var => ("VAR", 0),
                    Placeholder::Func => ("FUNC", 1),
                    Placeholder::Str => ("STR", 2),
                };
                let name = format!("{prefix}_{}", counters[slot]);
                counters[slot] += 1;
                map.insert(name.clone(), t.text.clone());
                name
            })
            .clone();
        out.push(Token::new(name, t.klass));
    }
    (out, map)
}

/// Restores names from `map`. Placeholders missing from the map get fresh
/// names (`v0`, `f0`, `"s0"`, ...) that collide with no mapped name and no
/// identifier already present in `tokens`.
pub fn decanonicalize(tokens: &[Token], map: &CanonMap) -> Vec<Token> {
    let mut taken: HashSet<String> = map.values().cloned().collect();
    for t in tokens {
        if !is_placeholder(&t.text) {
            taken.insert(t.text.clone());
        }
    }
    let mut fresh: HashMap<String, String> = HashMap::new();
    let mut counters = [0usize; 3];
    tokens
        .iter()
        .map(|t| {
            let Some((kind, _)) = placeholder_kind(&t.text) else {
                return t.clone();
            };
            if let Some(orig) = map.get(&t.text) {
                return Token::new(orig.clone(), t.klass);
            }
            let name = fresh
                .entry(t.text.clone())
                .or_insert_with(|| loop {
                    let (slot, candidate) = match kind {
                        Placeholder::Var => (0, format!("v{}", counters[0])),
                        Placeholder::Func => (1, format!("f{}", counters[1])),
                        Placeholder::Str => (2, format!("\"s{}\"", counters[2])),
                    };
                    counters[slot] += 1;
                    if taken.insert(candidate.clone()) {
                        break candidate;
                    }
                })
                .clone();
            let klass = match kind {
                Placeholder::Str => TokenClass::StringLit,
                _ => TokenClass::Identifier,
            };
            Token::new(name, klass)
        })
        .collect()
}

/// Re-lexes canonical surface forms into classed tokens.
pub fn tokens_from_texts(texts: &[String]) -> std::result::Result<Vec<Token>, LexError> {
    lex(&texts.join(" "))
}

pub fn texts(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(|t| t.text.clone()).collect()
}

/// Lexes and canonicalizes one corpus record.
pub fn program_from_record(rec: &CorpusRecord) -> std::result::Result<Program, LexError> {
    let toks = lex(&rec.source)?;
    let (canon, map) = canonicalize(&toks);
    Ok(Program {
        question_id: rec.question_id.clone(),
        solution_id: rec.solution_id.clone(),
        tokens: texts(&canon),
        runtime: rec.runtime,
        correct: rec.correct,
        canon_map: map,
    })
}

/// Checks the canonical-program invariants: no raw identifiers or string
/// literals, and map keys exactly the placeholders present.
pub fn check_program(p: &Program) -> std::result::Result<(), String> {
    if !(p.runtime >= 0.0) {
        return Err(format!("{}: negative runtime", p.solution_id));
    }
    let toks = tokens_from_texts(&p.tokens).map_err(|e| e.to_string())?;
    let mut present = HashSet::new();
    for t in &toks {
        match t.klass {
            TokenClass::Identifier if is_builtin(&t.text) => {}
            TokenClass::Identifier | TokenClass::StringLit => {
                if !is_placeholder(&t.text) {
                    return Err(format!("{}: raw name '{}'", p.solution_id, t.text));
                }
                present.insert(t.text.clone());
            }
            _ => {}
        }
    }
    let keys: HashSet<String> = p.canon_map.keys().cloned().collect();
    if keys != present {
        return Err(format!("{}: canon map does not match placeholders", p.solution_id));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Data("vocabulary must start with the special tokens".into()));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Data("vocabulary contains duplicates".into()));
        }
        Ok(Self { tokens, index })
    }

    /// Specials first, then every corpus token in sorted order.
    pub fn build<'a>(programs: impl IntoIterator<Item = &'a Program>) -> Self {
        let mut seen: Vec<String> = programs
            .into_iter()
            .flat_map(|p| p.tokens.iter().cloned())
            .collect::<HashSet<_>>()
            .into_iter()
            .filter(|t| !SPECIALS.contains(&t.as_str()))
            .collect();
        seen.sort();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(seen);
        Self::from_tokens(tokens).expect("valid by construction")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub kept: usize,
    pub dropped_incorrect: usize,
    pub rejected_negative_runtime: usize,
    pub rejected_unlexable: usize,
}

/// Reads a corpus JSONL file, keeping correct records with non-negative
/// runtime that lex cleanly.
pub fn ingest_jsonl(path: &Path) -> Result<(Vec<Program>, IngestSummary)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("cannot open corpus {}: {e}", path.display())))?;
    ingest_reader(std::io::BufReader::new(file))
}

pub fn ingest_reader(reader: impl BufRead) -> Result<(Vec<Program>, IngestSummary)> {
    let mut programs = Vec::new();
    let mut summary = IngestSummary::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("corpus line {}: {e}", i + 1)))?;
        summary.records += 1;
        if !rec.correct {
            summary.dropped_incorrect += 1;
            continue;
        }
        if !(rec.runtime >= 0.0) {
            summary.rejected_negative_runtime += 1;
            continue;
        }
        match program_from_record(&rec) {
            Ok(p) => programs.push(p),
            Err(_) => summary.rejected_unlexable += 1,
        }
    }
    summary.kept = programs.len();
    Ok((programs, summary))
}

/// Percentile by rank `min(N, floor(p * N) + 1)` over sorted values.
///
/// For the median of an even-sized sample this takes the upper middle
/// element.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let n = sorted.len();
    let rank = ((p * n as f64).floor() as usize + 1).min(n);
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        if values.is_empty() {
            return Self {
                edges: vec![0.0, 1.0],
                counts: vec![0],
            };
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Plain-text bars, one line per bin.
    pub fn render(&self, width: usize) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut s = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let bar = "#".repeat((c * width).div_ceil(max));
            s.push_str(&format!(
                "[{:>10.1}, {:>10.1}) {:>6} {}\n",
                self.edges[i],
                self.edges[i + 1],
                c,
                bar
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub programs: usize,
    pub questions: usize,
    pub median_runtime: f64,
    pub p90_runtime: f64,
    pub p90_over_median: f64,
    pub runtime_histogram: Histogram,
    pub token_length_histogram: Histogram,
    /// Each program's runtime divided by the fastest runtime of its question.
    pub relative_runtime_histogram: Histogram,
}

pub fn stats(programs: &[Program], bins: usize) -> Result<StatsReport> {
    if programs.is_empty() {
        return Err(Error::Data("cannot compute statistics of an empty corpus".into()));
    }
    let mut runtimes: Vec<f64> = programs.iter().map(|p| p.runtime).collect();
    runtimes.sort_by(f64::total_cmp);
    let median = percentile(&runtimes, 0.5);
    let p90 = percentile(&runtimes, 0.9);
    let lengths: Vec<f64> = programs.iter().map(|p| p.tokens.len() as f64).collect();
    let mut fastest: HashMap<&str, f64> = HashMap::new();
    for p in programs {
        let e = fastest.entry(p.question_id.as_str()).or_insert(f64::INFINITY);
        *e = e.min(p.runtime);
    }
    let relative: Vec<f64> = programs
        .iter()
        .map(|p| {
            let best = fastest[p.question_id.as_str()];
            if best > 0.0 {
                p.runtime / best
            } else {
                1.0
            }
        })
        .collect();
    Ok(StatsReport {
        programs: programs.len(),
        questions: fastest.len(),
        median_runtime: median,
        p90_runtime: p90,
        p90_over_median: if median > 0.0 { p90 / median } else { 1.0 },
        runtime_histogram: Histogram::new(&runtimes, bins),
        token_length_histogram: Histogram::new(&lengths, bins),
        relative_runtime_histogram: Histogram::new(&relative, bins),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon(src: &str) -> (Vec<String>, CanonMap) {
        let (t, m) = canonicalize(&lex(src).unwrap());
        (texts(&t), m)
    }

    #[test]
    fn single_identifier() {
        let (t, m) = canon("let count = 0;");
        assert_eq!(t, vec!["let", "VAR_0", "=", "0", ";"]);
        assert_eq!(m["VAR_0"], "count");
    }

    #[test]
    fn function_names_and_first_occurrence() {
        let (t, m) = canon("def helper(a) { return a; } let z = helper(3);");
        assert_eq!(m["FUNC_0"], "helper");
        assert_eq!(m["VAR_0"], "a");
        assert_eq!(m["VAR_1"], "z");
        assert_eq!(t[1], "FUNC_0");
        assert!(t.contains(&"len".to_string()) || !t.contains(&"helper".to_string()));
    }

    #[test]
    fn builtins_numbers_and_strings() {
        let (t, m) = canon(r#"let s = sum(xs) + 10; print("hi"); print("hi"); print("yo");"#);
        assert_eq!(
            t,
            vec![
                "let", "VAR_0", "=", "sum", "(", "VAR_1", ")", "+", "10", ";", "print", "(",
                "STR_0", ")", ";", "print", "(", "STR_0", ")", ";", "print", "(", "STR_1", ")",
                ";"
            ]
        );
        assert_eq!(m["STR_1"], "\"yo\"");
    }

    #[test]
    fn renamed_programs_collide() {
        let (a, _) = canon("let x = 1; while (x < 3) { x = x + y; }");
        let (b, _) = canon("let foo = 1; while (foo < 3) { foo = foo + bar; }");
        assert_eq!(a, b);
    }

    #[test]
    fn decanonicalize_round_trip_and_fresh_names() {
        let toks = lex("def f(a) { return a + v0; } let z = f(2);").unwrap();
        let (c, m) = canonicalize(&toks);
        assert_eq!(decanonicalize(&c, &m), toks);

        let unmapped = lex("let VAR_5 = FUNC_1(VAR_0);").unwrap();
        let mut map = CanonMap::new();
        map.insert("VAR_0".into(), "v0".into());
        let out = texts(&decanonicalize(&unmapped, &map));
        assert_eq!(out, vec!["let", "v1", "=", "f0", "(", "v0", ")", ";"]);
        assert!(lex(&out.join(" ")).is_ok());
    }

    #[test]
    fn vocab_layout() {
        let p = Program {
            question_id: "q".into(),
            solution_id: "s".into(),
            tokens: ["let", "VAR_0", "=", "1", ";"].map(String::from).to_vec(),
            runtime: 1.0,
            correct: true,
            canon_map: CanonMap::new(),
        };
        let v = Vocab::build([&p]);
        assert_eq!(v.len(), 10);
        assert_eq!(v.id("never-seen"), UNK);
        assert_eq!(UNK, 3);
        assert_eq!(v.decode(&v.encode(&p.tokens)), p.tokens);
    }

    #[test]
    fn percentile_rule() {
        let mut xs = vec![1.0; 9];
        xs.push(10.0);
        assert_eq!(percentile(&xs, 0.5), 1.0);
        assert_eq!(percentile(&xs, 0.9), 10.0);
        assert_eq!(percentile(&[5.0], 0.9), 5.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.5), 3.0);
    }

    #[test]
    fn histogram_mass() {
        let h = Histogram::new(&[1.0, 2.0, 2.0, 9.0, 10.0], 4);
        assert_eq!(h.total(), 5);
        assert_eq!(h.counts, vec![3, 0, 0, 2]);
        assert!(h.render(10).lines().count() == 4);
    }
}
