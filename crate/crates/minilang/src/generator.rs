//! Synthetic corpus with planted efficiency edits.
//!
//! Every question belongs to one family and fixes a workload (array
//! literals, loop bounds). Its submissions are drawn from two slow and two
//! fast templates of that family, with per-submission identifier names and
//! optional cheap filler statements (none by default). A question is
//! resampled until every fast submission beats every slow one by at least
//! [`MIN_FAMILY_RATIO`], each side stays within [`MAX_SIDE_SPREAD`], and all
//! submissions print the same output.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::interp::{interpret, DEFAULT_STEP_LIMIT};
use crate::parser::parse;
use crate::pretty::pretty_print;

pub const MIN_FAMILY_RATIO: f64 = 1.3;
/// Submissions on the same side of a question stay within this runtime
/// ratio of each other, so that pairs mined at the usual 1.2x threshold
/// always cross from a slow template to a fast one.
pub const MAX_SIDE_SPREAD: f64 = 1.15;
const MAX_QUESTION_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::F1,
        Family::F2,
        Family::F3,
        Family::F4,
        Family::F5,
        Family::F6,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn description(self) -> &'static str {
        match self {
            Family::F1 => "manual accumulation loop replaced by sum",
            Family::F2 => "sorted() hoisted out of a loop",
            Family::F3 => "linear contains in a loop replaced by one sort and contains_sorted",
            Family::F4 => "full scan replaced by break on first hit",
            Family::F5 => "nested repeated addition replaced by a running accumulator",
            Family::F6 => "repeated identical call replaced by a cached variable",
        }
    }

    /// Recovers the family from a generated question id such as `F3-q017`.
    pub fn from_question_id(qid: &str) -> Option<Family> {
        qid.split('-').next()?.parse().ok()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.index() + 1)
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "F1" | "f1" => Ok(Family::F1),
            "F2" | "f2" => Ok(Family::F2),
            "F3" | "f3" => Ok(Family::F3),
            "F4" | "f4" => Ok(Family::F4),
            "F5" | "f5" => Ok(Family::F5),
            "F6" | "f6" => Ok(Family::F6),
            other => Err(format!("unknown family '{other}' (expected F1..F6)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub families: Vec<Family>,
    pub questions_per_family: usize,
    pub submissions_per_question: usize,
    pub slow_fraction: f64,
    /// Inclusive bounds on filler statements per submission.
    pub filler_stmt_range: (usize, usize),
    /// Inclusive bounds on the base workload size.
    pub array_size_range: (usize, usize),
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            questions_per_family: 20,
            submissions_per_question: 30,
            slow_fraction: 0.5,
            filler_stmt_range: (0, 0),
            array_size_range: (6, 12),
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.families.is_empty() {
            return Err("at least one family is required".into());
        }
        if self.questions_per_family == 0 || self.submissions_per_question == 0 {
            return Err("question and submission counts must be positive".into());
        }
        if self.submissions_per_question < 2 {
            return Err("each question needs at least 2 submissions (one slow, one fast)".into());
        }
        if !(self.slow_fraction > 0.0 && self.slow_fraction < 1.0) {
            return Err("slow_fraction must lie strictly between 0 and 1".into());
        }
        let (lo, hi) = self.filler_stmt_range;
        if lo > hi {
            return Err("filler_stmt_range is empty".into());
        }
        let (lo, hi) = self.array_size_range;
        if lo < 2 || lo > hi {
            return Err("array_size_range must satisfy 2 <= lo <= hi".into());
        }
        if hi > 64 {
            return Err("array_size_range upper bound must be at most 64".into());
        }
        Ok(())
    }

    /// Number of slow submissions per question.
    pub fn slow_count(&self) -> usize {
        let n = self.submissions_per_question;
        ((self.slow_fraction * n as f64).round() as usize).clamp(1, n - 1)
    }
}

/// One line of the corpus JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub question_id: String,
    pub solution_id: String,
    pub source: String,
    pub runtime: f64,
    pub correct: bool,
}

/// A generated record with the generator's ground truth attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub record: CorpusRecord,
    pub family: Family,
    pub fast: bool,
    /// Template index within the slow or fast side (0 or 1).
    pub form: usize,
    pub output: Vec<i64>,
}

pub fn generate_corpus(config: &GeneratorConfig) -> Result<Vec<CorpusRecord>, String> {
    Ok(generate_detailed(config)?
        .into_iter()
        .map(|s| s.record)
        .collect())
}

pub fn generate_detailed(config: &GeneratorConfig) -> Result<Vec<Submission>, String> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    let mut families = config.families.clone();
    families.sort();
    families.dedup();
    for family in families {
        for q in 0..config.questions_per_family {
            let qid = format!("{family}-q{q:03}");
            out.extend(generate_question(config, family, &qid, &mut rng)?);
        }
    }
    Ok(out)
}

pub fn to_jsonl(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Workload shared by all submissions of one question.
#[derive(Debug, Clone)]
struct Workload {
    a: Vec<i64>,
    b: Vec<i64>,
    n: i64,
    k: i64,
}

fn literal(xs: &[i64]) -> String {
    let items: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

const NAME_POOL: &[&str] = &[
    "a", "b", "c", "d", "e", "g", "h", "i", "j", "k", "m", "n", "p", "q", "r", "s", "t", "u", "w",
    "x", "y", "z", "acc", "tot", "res", "cnt", "idx", "val", "arr", "data", "nums", "xs", "ys",
    "buf", "tmp", "best", "hits", "flag", "found", "lst", "seq", "cur", "total", "count", "items",
    "vals", "pos", "step", "out", "ans", "num", "key", "lim", "lo", "hi", "mid", "head", "tail",
];

const FUNC_POOL: &[&str] = &[
    "biggest", "top", "peak", "largest", "find_max", "maxval", "highest", "upper", "most",
    "max_of", "get_max", "scan_max",
];

/// Role names for one submission: `v[0..]` are distinct variable names.
struct Names {
    v: Vec<String>,
    f: String,
}

fn pick_names(rng: &mut ChaCha8Rng, count: usize) -> Names {
    let v = NAME_POOL
        .choose_multiple(rng, count)
        .map(|s| s.to_string())
        .collect();
    let f = FUNC_POOL.choose(rng).expect("pool").to_string();
    Names { v, f }
}

fn sample_workload(family: Family, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Workload {
    let (lo, hi) = cfg.array_size_range;
    let size = rng.gen_range(lo..=hi);
    let values = |rng: &mut ChaCha8Rng, n: usize, max: i64| -> Vec<i64> {
        (0..n).map(|_| rng.gen_range(0..max)).collect()
    };
    let distinct = |rng: &mut ChaCha8Rng, n: usize, max: i64| -> Vec<i64> {
        let mut pool: Vec<i64> = (0..max).collect();
        pool.shuffle(rng);
        pool.truncate(n);
        pool
    };
    match family {
        Family::F1 => Workload {
            a: values(rng, size, 50),
            b: Vec::new(),
            n: 0,
            k: 0,
        },
        Family::F2 => {
            let m = rng.gen_range(3..=6);
            let a = values(rng, size, 60);
            let b = (0..m).map(|_| rng.gen_range(0..size as i64)).collect();
            Workload { a, b, n: 0, k: 0 }
        }
        Family::F3 => {
            let size = size + 4;
            let probes = rng.gen_range(2 * size..=3 * size) as i64;
            let a = distinct(rng, size, 3 * size as i64);
            Workload {
                a,
                b: Vec::new(),
                n: probes,
                k: 0,
            }
        }
        Family::F4 => {
            let size = size + 4;
            let a = distinct(rng, size, 90);
            let p = rng.gen_range(0..(size / 4).max(1));
            let k = a[p];
            Workload {
                a,
                b: Vec::new(),
                n: 0,
                k,
            }
        }
        Family::F5 => {
            let a: Vec<i64> = (0..size + 2).map(|_| rng.gen_range(1..10)).collect();
            Workload {
                n: a.len() as i64,
                a,
                b: Vec::new(),
                k: rng.gen_range(2..10),
            }
        }
        Family::F6 => {
            let m = rng.gen_range(3..=6);
            let a = values(rng, size, 80);
            let b = values(rng, m, 80);
            Workload { a, b, n: 0, k: 0 }
        }
    }
}

/// Renders template `form` of the slow or fast side. Returns the top-level
/// statements and the number of leading workload declarations.
fn render(family: Family, fast: bool, form: usize, w: &Workload, nm: &Names) -> (Vec<String>, usize) {
    let v = |i: usize| nm.v[i].as_str();
    let f = nm.f.as_str();
    let (a, b) = (literal(&w.a), literal(&w.b));
    match (family, fast, form) {
        // F1: array v0, accumulator v1, index v2
        (Family::F1, false, 0) => (
            vec![
                format!("let {} = {a};", v(0)),
                format!("let {} = 0;", v(1)),
                format!("for {i} in range(len({arr})) {{ {s} = {s} + {arr}[{i}]; }}", i = v(2), arr = v(0), s = v(1)),
                format!("print({});", v(1)),
            ],
            1,
        ),
        (Family::F1, false, _) => (
            vec![
                format!("let {} = {a};", v(0)),
                format!("let {} = 0;", v(1)),
                format!("for {i} in range(len({arr})) {{ {s} = {arr}[{i}] + {s}; }}", i = v(2), arr = v(0), s = v(1)),
                format!("print({});", v(1)),
            ],
            1,
        ),
        (Family::F1, true, 0) => (
            vec![
                format!("let {} = {a};", v(0)),
                format!("let {} = sum({});", v(1), v(0)),
                format!("print({});", v(1)),
            ],
            1,
        ),
        (Family::F1, true, _) => (
            vec![format!("let {} = {a};", v(0)), format!("print(sum({}));", v(0))],
            1,
        ),
        // F2: array v0, queries v1, accumulator v2, index v3, sorted copy v4
        (Family::F2, false, 0) => (
            vec![
                format!("let {} = {a};", v(0)),
                format!("let {} = {b};", v(1)),
                format!("let {} = 0;", v(2)),
                format!(
                    "for {i} in range(len({q})) {{ let {t} = sorted({arr}); {s} = {s} + {t}[{q}[{i}]]; }}",
                    i = v(3), q = v(1), t = v(4), arr = v(0), s = v(2)
                ),
                format!("print({});", v(2)),
            ],
            2,
        ),
        (Family::F2, false, _) => (
            vec![
                format!("let {} = {a};", v(0)),
                format!("let {} = {b};", v(1)),
                format!("let {} = 0;", v(2)),
                format!(
                    "for {i} in range(len({q})) {{ {s} = {s} + sorted({arr})[{q}[{i}]]; }}",
                    i = v(3), q = v(1), arr = v(0), s = v(2)
                ),
                format!("print({});", v(2)),
            ],
            2,
        ),
        (Family::F2, true, form) => {
            let hoisted = format!("let {} = sorted({});", v(4), v(0));
            let init = format!("let {} = 0;", v(2));
            let (first, second) = if form == 0 { (hoisted, init) } else { (init, hoisted) };
            (
                vec![
                    format!("let {} = {a};", v(0)),
                    format!("let {} = {b};", v(1)),
                    first,
                    second,
                    format!(
                        "for {i} in range(len({q})) {{ {s} = {s} + {t}[{q}[{i}]]; }}",
                        i = v(3), q = v(1), t = v(4), s = v(2)
                    ),
                    format!("print({});", v(2)),
                ],
                2,
            )
        }
        // F3: array v0, counter v1, probe v2, inner index v3, sorted copy v4
        (Family::F3, false, 0) => (
            vec![
                format!("let {} = {a};", v(0)),
                format!("let {} = 0;", v(1)),
                format!(
                    "for {i} in range({n}) {{ if (contains({arr}, {i})) {{ {c} = {c} + 1; }} }}",
                    i = v(2), n = w.n, arr = v(0), c = v(1)
                ),
                format!("print({});", v(1)),
            ],
            1,
        ),
        (Family::F3, false, _) => (
            vec![
                format!("let {} = {a};", v(0)),
                format!("let {} = 0;", v(1)),
                format!(
                    "for {i} in range({n}) {{ if (contains({arr}, {i})) {{ {c} = 1 + {c}; }} }}",
                    i = v(2), n = w.n, arr = v(0), c = v(1)
                ),
                format!("print({});", v(1)),
            ],
            1,
        ),
        (Family::F3, true, form) => {
            let hoisted = format!("let {} = sorted({});", v(4), v(0));
            let init = format!("let {} = 0;", v(1));
            let (first, second) = if form == 0 { (hoisted, init) } else { (init, hoisted) };
            (
                vec![
                    format!("let {} = {a};", v(0)),
                    first,
                    second,
                    format!(
                        "for {i} in range({n}) {{ if (contains_sorted({t}, {i})) {{ {c} = {c} + 1; }} }}",
                        i = v(2), n = w.n, t = v(4), c = v(1)
                    ),
                    format!("print({});", v(1)),
                ],
                1,
            )
        }
        // F4: array v0, flag v1, index v2
        (Family::F4, fast, 0) => {
            let hit = if fast {
                format!("{} = 1; break;", v(1))
            } else {
                format!("{} = 1;", v(1))
            };
            (
                vec![
                    format!("let {} = {a};", v(0)),
                    format!("let {} = 0;", v(1)),
                    format!(
                        "for {i} in range(len({arr})) {{ if ({arr}[{i}] == {k}) {{ {hit} }} }}",
                        i = v(2), arr = v(0), k = w.k
                    ),
                    format!("print({});", v(1)),
                ],
                1,
            )
        }
        (Family::F4, fast, _) => {
            let hit = if fast {
                format!("{} = 1; break;", v(1))
            } else {
                format!("{} = 1;", v(1))
            };
            (
                vec![
                    format!("let {} = {a};", v(0)),
                    format!("let {} = 0;", v(1)),
                    format!(
                        "for {i} in range(len({arr})) {{ if ({k} == {arr}[{i}]) {{ {hit} }} }}",
                        i = v(2), arr = v(0), k = w.k
                    ),
                    format!("print({});", v(1)),
                ],
                1,
            )
        }
        // F5: total v0, outer v1, inner v2, partial v3, weights v4
        (Family::F5, false, 0) => (
            vec![
                format!("let {} = {a};", v(4)),
                format!("let {} = 0;", v(0)),
                format!(
                    "for {i} in range(len({wt})) {{ let {p} = 0; for {j} in range({i}) {{ {p} = {p} + {k}; }} {s} = {s} + {wt}[{i}] * {p}; }}",
                    i = v(1), j = v(2), p = v(3), s = v(0), wt = v(4), k = w.k
                ),
                format!("print({});", v(0)),
            ],
            1,
        ),
        (Family::F5, false, _) => (
            vec![
                format!("let {} = {a};", v(4)),
                format!("let {} = 0;", v(0)),
                format!(
                    "for {i} in range(len({wt})) {{ let {p} = 0; for {j} in range({i}) {{ {p} = {k} + {p}; }} {s} = {s} + {p} * {wt}[{i}]; }}",
                    i = v(1), j = v(2), p = v(3), s = v(0), wt = v(4), k = w.k
                ),
                format!("print({});", v(0)),
            ],
            1,
        ),
        (Family::F5, true, 0) => (
            vec![
                format!("let {} = {a};", v(4)),
                format!("let {} = 0;", v(0)),
                format!("let {} = 0;", v(3)),
                format!(
                    "for {i} in range(len({wt})) {{ {s} = {s} + {wt}[{i}] * {p}; {p} = {p} + {k}; }}",
                    i = v(1), p = v(3), s = v(0), wt = v(4), k = w.k
                ),
                format!("print({});", v(0)),
            ],
            1,
        ),
        (Family::F5, true, _) => (
            vec![
                format!("let {} = {a};", v(4)),
                format!("let {} = 0;", v(0)),
                format!("let {} = 0;", v(3)),
                format!(
                    "for {i} in range(len({wt})) {{ {s} = {s} + {p} * {wt}[{i}]; {p} = {k} + {p}; }}",
                    i = v(1), p = v(3), s = v(0), wt = v(4), k = w.k
                ),
                format!("print({});", v(0)),
            ],
            1,
        ),
        // F6: param v0, running max v1, index v2, array v3, queries v4,
        // counter v5, outer index v6, cached value v7
        (Family::F6, fast, form) => {
            let def = format!(
                "def {f}({p}) {{ let {r} = {p}[0]; for {i} in range(len({p})) {{ if ({p}[{i}] > {r}) {{ {r} = {p}[{i}]; }} }} return {r}; }}",
                p = v(0), r = v(1), i = v(2)
            );
            let mut stmts = vec![def, format!("let {} = {a};", v(3)), format!("let {} = {b};", v(4))];
            let count = format!("let {} = 0;", v(5));
            let (c, j, arr, q, m) = (v(5), v(6), v(3), v(4), v(7));
            if fast {
                let cached = format!("let {m} = {f}({arr});");
                if form == 0 {
                    stmts.push(cached);
                    stmts.push(count);
                } else {
                    stmts.push(count);
                    stmts.push(cached);
                }
                stmts.push(format!(
                    "for {j} in range(len({q})) {{ if ({q}[{j}] < {m}) {{ {c} = {c} + 1; }} }}"
                ));
            } else {
                stmts.push(count);
                if form == 0 {
                    stmts.push(format!(
                        "for {j} in range(len({q})) {{ if ({q}[{j}] < {f}({arr})) {{ {c} = {c} + 1; }} }}"
                    ));
                } else {
                    stmts.push(format!(
                        "for {j} in range(len({q})) {{ let {m} = {f}({arr}); if ({q}[{j}] < {m}) {{ {c} = {c} + 1; }} }}"
                    ));
                }
            }
            stmts.push(format!("print({c});"));
            (stmts, 3)
        }
    }
}

fn filler(rng: &mut ChaCha8Rng, name: &str, array: Option<&str>) -> String {
    let choice = rng.gen_range(0..if array.is_some() { 3 } else { 2 });
    match (choice, array) {
        (0, _) => format!("let {name} = {};", rng.gen_range(0..20)),
        (1, _) => format!("let {name} = {} + {};", rng.gen_range(0..10), rng.gen_range(1..10)),
        (_, Some(arr)) => format!("let {name} = len({arr});"),
        _ => unreachable!(),
    }
}

/// Variable name index used for the family's main array, if any.
fn main_array(family: Family) -> Option<usize> {
    match family {
        Family::F1 | Family::F2 | Family::F3 | Family::F4 => Some(0),
        Family::F6 => Some(3),
        Family::F5 => None,
    }
}

struct Draft {
    source: String,
    fast: bool,
    form: usize,
}

fn side_is_tight(drafts: &[Draft], results: &[crate::interp::ExecResult], fast: bool) -> bool {
    let steps: Vec<u64> = drafts
        .iter()
        .zip(results)
        .filter(|(d, _)| d.fast == fast)
        .map(|(_, r)| r.steps)
        .collect();
    match (steps.iter().min(), steps.iter().max()) {
        (Some(&lo), Some(&hi)) => (hi as f64) <= MAX_SIDE_SPREAD * lo as f64,
        _ => true,
    }
}

fn generate_question(
    cfg: &GeneratorConfig,
    family: Family,
    qid: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Submission>, String> {
    let subs = cfg.submissions_per_question;
    let n_slow = cfg.slow_count();
    for _ in 0..MAX_QUESTION_ATTEMPTS {
        let w = sample_workload(family, cfg, rng);
        let mut fast_flags: Vec<bool> = (0..subs).map(|i| i >= n_slow).collect();
        fast_flags.shuffle(rng);
        let mut drafts = Vec::with_capacity(subs);
        for &fast in &fast_flags {
            let form = rng.gen_range(0..2);
            let (fill_lo, fill_hi) = cfg.filler_stmt_range;
            let n_fill = rng.gen_range(fill_lo..=fill_hi);
            let names = pick_names(rng, 8 + n_fill);
            let (mut stmts, preamble) = render(family, fast, form, &w, &names);
            let array = main_array(family).map(|i| names.v[i].as_str());
            for f in 0..n_fill {
                let text = filler(rng, &names.v[8 + f], array);
                // after the workload declarations or just before the final print
                let at = if rng.gen_bool(0.5) { preamble } else { stmts.len() - 1 };
                stmts.insert(at, text);
            }
            let program = parse(&stmts.join("\n"))
                .map_err(|e| format!("internal template error in {family}: {e}"))?;
            drafts.push(Draft {
                source: pretty_print(&program),
                fast,
                form,
            });
        }
        let mut results = Vec::with_capacity(subs);
        for d in &drafts {
            let program = parse(&d.source).map_err(|e| format!("internal error: {e}"))?;
            results.push(interpret(&program, DEFAULT_STEP_LIMIT));
        }
        if results.iter().any(|r| !r.ok()) {
            return Err(format!("internal error: template for {family} failed to run"));
        }
        let expected = &results[0].output;
        if results.iter().any(|r| &r.output != expected) {
            return Err(format!("internal error: {family} templates disagree on output"));
        }
        let slowest_fast = drafts
            .iter()
            .zip(&results)
            .filter(|(d, _)| d.fast)
            .map(|(_, r)| r.steps)
            .max()
            .unwrap_or(0);
        let fastest_slow = drafts
            .iter()
            .zip(&results)
            .filter(|(d, _)| !d.fast)
            .map(|(_, r)| r.steps)
            .min()
            .unwrap_or(u64::MAX);
        if (fastest_slow as f64) < MIN_FAMILY_RATIO * slowest_fast as f64 {
            continue;
        }
        if !side_is_tight(&drafts, &results, true) || !side_is_tight(&drafts, &results, false) {
            continue;
        }
        return Ok(drafts
            .into_iter()
            .zip(results)
            .enumerate()
            .map(|(i, (d, r))| Submission {
                record: CorpusRecord {
                    question_id: qid.to_string(),
                    solution_id: format!("{qid}-s{i:02}"),
                    source: d.source,
                    runtime: r.steps as f64,
                    correct: true,
                },
                family,
                fast: d.fast,
                form: d.form,
                output: r.output,
            })
            .collect());
    }
    Err(format!(
        "could not sample a {family} workload with a {MIN_FAMILY_RATIO}x gap; widen array_size_range"
    ))
}
