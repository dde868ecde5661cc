//! ROUGE-N similarity, slow/fast pair mining, splitting and max-improvement
//! filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Program;
use crate::error::{Error, Result};

pub const ROUGE_ORDER: usize = 8;
pub const DEFAULT_MIN_SPEEDUP: f64 = 1.2;
pub const DEFAULT_MIN_SIMILARITY: f64 = 0.4;

/// One line of the pairs JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramPair {
    pub question_id: String,
    pub slow_id: String,
    pub fast_id: String,
    pub similarity: f64,
    pub speedup: f64,
}

fn ngram_counts<T: AsRef<str>>(seq: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts
                .entry(w.iter().map(|t| t.as_ref()).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N F1 over n-gram multisets. Zero when either side is shorter than `n`.
pub fn rouge_n<T: AsRef<str>>(a: &[T], b: &[T], n: usize) -> f64 {
    assert!(n >= 1, "rouge order must be positive");
    if a.len() < n || b.len() < n {
        return 0.0;
    }
    let ca = ngram_counts(a, n);
    let cb = ngram_counts(b, n);
    let overlap: usize = ca
        .iter()
        .filter_map(|(g, &x)| cb.get(g).map(|&y| x.min(y)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / (a.len() - n + 1) as f64;
    let r = overlap as f64 / (b.len() - n + 1) as f64;
    2.0 * p * r / (p + r)
}

/// Interned n-gram bags so all-pairs scoring within a question hashes each
/// program once.
struct Bags {
    bags: Vec<HashMap<u64, usize>>,
    totals: Vec<usize>,
}

impl Bags {
    fn new(programs: &[&Program], n: usize) -> Self {
        let mut intern: HashMap<Vec<&str>, u64> = HashMap::new();
        let mut bags = Vec::with_capacity(programs.len());
        let mut totals = Vec::with_capacity(programs.len());
        for p in programs {
            let mut bag = HashMap::new();
            for (g, c) in ngram_counts(&p.tokens, n) {
                let next = intern.len() as u64;
                let id = *intern.entry(g).or_insert(next);
                bag.insert(id, c);
            }
            totals.push(p.tokens.len().saturating_sub(n - 1));
            bags.push(bag);
        }
        Self { bags, totals }
    }

    fn f1(&self, i: usize, j: usize) -> f64 {
        if self.totals[i] == 0 || self.totals[j] == 0 {
            return 0.0;
        }
        let (small, large) = if self.bags[i].len() <= self.bags[j].len() {
            (&self.bags[i], &self.bags[j])
        } else {
            (&self.bags[j], &self.bags[i])
        };
        let overlap: usize = small
            .iter()
            .filter_map(|(g, &x)| large.get(g).map(|&y| x.min(y)))
            .sum();
        if overlap == 0 {
            return 0.0;
        }
        let p = overlap as f64 / self.totals[i] as f64;
        let r = overlap as f64 / self.totals[j] as f64;
        2.0 * p * r / (p + r)
    }
}

pub fn group_by_question(corpus: &[Program]) -> BTreeMap<&str, Vec<&Program>> {
    let mut groups: BTreeMap<&str, Vec<&Program>> = BTreeMap::new();
    for p in corpus {
        groups.entry(p.question_id.as_str()).or_default().push(p);
    }
    groups
}

/// All same-question (slow, fast) pairs with `runtime(slow) / runtime(fast)
/// >= min_speedup` and ROUGE-8 F1 `>= min_similarity`, sorted by
/// (question, slow id, fast id).
pub fn mine_pairs(corpus: &[Program], min_speedup: f64, min_similarity: f64) -> Vec<ProgramPair> {
    let mut out = Vec::new();
    for (qid, progs) in group_by_question(corpus) {
        let bags = Bags::new(&progs, ROUGE_ORDER);
        for (i, a) in progs.iter().enumerate() {
            for (j, b) in progs.iter().enumerate() {
                if i == j || b.runtime <= 0.0 || a.runtime <= b.runtime {
                    continue;
                }
                let speedup = a.runtime / b.runtime;
                if speedup < min_speedup {
                    continue;
                }
                let similarity = bags.f1(i, j);
                if similarity < min_similarity {
                    continue;
                }
                out.push(ProgramPair {
                    question_id: qid.to_string(),
                    slow_id: a.solution_id.clone(),
                    fast_id: b.solution_id.clone(),
                    similarity,
                    speedup,
                });
            }
        }
    }
    sort_pairs(&mut out);
    out
}

pub fn sort_pairs(pairs: &mut [ProgramPair]) {
    pairs.sort_by(|a, b| {
        (&a.question_id, &a.slow_id, &a.fast_id).cmp(&(&b.question_id, &b.slow_id, &b.fast_id))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Fractions of the non-test slow-side programs whose pairs go to train
    /// and valid; they must sum to 1.
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_unique_inputs: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            valid_fraction: 0.1,
            test_unique_inputs: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<ProgramPair>,
    pub valid: Vec<ProgramPair>,
    /// Solution ids of held-out input programs, sorted.
    pub test_inputs: Vec<String>,
}

/// Holds out `test_unique_inputs` slow-side programs, then assigns each
/// remaining slow-side program (with all its pairs) to train or valid.
pub fn split(pairs: &[ProgramPair], spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction >= 0.0 && spec.valid_fraction >= 0.0)
        || (spec.train_fraction + spec.valid_fraction - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "train and valid fractions must be non-negative and sum to 1, got {} and {}",
            spec.train_fraction, spec.valid_fraction
        )));
    }
    let inputs: Vec<&str> = pairs
        .iter()
        .map(|p| p.slow_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if inputs.len() < spec.test_unique_inputs {
        return Err(Error::Data(format!(
            "need {} distinct slow-side programs for the test split, found {}",
            spec.test_unique_inputs,
            inputs.len()
        )));
    }
    let mut order = inputs;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let (test, rest) = order.split_at(spec.test_unique_inputs);
    let n_valid = (spec.valid_fraction * rest.len() as f64).round() as usize;
    let valid_set: BTreeSet<&str> = rest[..n_valid].iter().copied().collect();
    let test_set: BTreeSet<&str> = test.iter().copied().collect();
    let mut out = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test_inputs: test_set.iter().map(|s| s.to_string()).collect(),
    };
    for p in pairs {
        let s = p.slow_id.as_str();
        if test_set.contains(s) {
            continue;
        }
        if valid_set.contains(s) {
            out.valid.push(p.clone());
        } else {
            out.train.push(p.clone());
        }
    }
    Ok(out)
}

/// Keeps, per slow-side program, the pair with the largest speedup; ties go
/// to the smallest fast id.
pub fn filter_max_improvement(pairs: &[ProgramPair]) -> Vec<ProgramPair> {
    let mut best: BTreeMap<(&str, &str), &ProgramPair> = BTreeMap::new();
    for p in pairs {
        best.entry((p.question_id.as_str(), p.slow_id.as_str()))
            .and_modify(|cur| {
                if p.speedup > cur.speedup
                    || (p.speedup == cur.speedup && p.fast_id < cur.fast_id)
                {
                    *cur = p;
                }
            })
            .or_insert(p);
    }
    let mut out: Vec<ProgramPair> = best.into_values().cloned().collect();
    sort_pairs(&mut out);
    out
}

pub fn write_pairs_jsonl(pairs: &[ProgramPair], w: &mut impl Write) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut *w, p).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<ProgramPair>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("cannot open pairs {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: ProgramPair = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("pairs line {}: {e}", i + 1)))?;
        out.push(p);
    }
    Ok(out)
}

/// Looks up both sides of every pair; errors if any id is missing.
pub fn resolve<'a>(
    pairs: &[ProgramPair],
    by_id: &HashMap<&str, &'a Program>,
) -> Result<Vec<(&'a Program, &'a Program)>> {
    pairs
        .iter()
        .map(|p| {
            let get = |id: &str| {
                by_id.get(id).copied().ok_or_else(|| {
                    Error::Data(format!("pair references unknown solution '{id}'"))
                })
            };
            Ok((get(&p.slow_id)?, get(&p.fast_id)?))
        })
        .collect()
}

pub fn index_by_id(corpus: &[Program]) -> HashMap<&str, &Program> {
    corpus.iter().map(|p| (p.solution_id.as_str(), p)).collect()
}
