//! BLEU, ΔBLEU, reference sets and the correctness, efficiency and
//! diversity scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{decanonicalize, tokens_from_texts, CanonMap, Program, Vocab};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::pairing::{rouge_n, ROUGE_ORDER};

pub const DEFAULT_MAX_N: usize = 4;
pub const DEFAULT_NEIGHBORHOOD: f64 = 0.6;

/// Ordered so that floating-point sums over n-gram types are reproducible.
fn ngrams<T: AsRef<str>>(seq: &[T], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut m = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

fn closest_ref_len(c: usize, refs: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for r in refs {
        best = Some(match best {
            None => r,
            Some(b) => {
                let (dr, db) = (r.abs_diff(c), b.abs_diff(c));
                if dr < db || (dr == db && r < b) {
                    r
                } else {
                    b
                }
            }
        });
    }
    best.unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Geometric mean of smoothed precisions, or 0 when unigrams do not match.
fn combine(numerators: &[f64], denominators: &[usize]) -> f64 {
    if numerators[0] == 0.0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for (i, (&num, &den)) in numerators.iter().zip(denominators).enumerate() {
        let (num, den) = if i == 0 {
            (num, den as f64)
        } else {
            (
                if num == 0.0 { 1.0 } else { num },
                if den == 0 { 1.0 } else { den as f64 },
            )
        };
        log_sum += (num / den).ln();
    }
    (log_sum / numerators.len() as f64).exp()
}

/// Sentence BLEU with clipping by the largest reference count, brevity
/// penalty against the closest reference length, and add-one smoothing of
/// zero counts for orders above one.
pub fn bleu<T: AsRef<str>>(candidate: &[T], references: &[&[T]], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be positive");
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut nums = Vec::with_capacity(max_n);
    let mut dens = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let cand = ngrams(candidate, n);
        let mut max_ref: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
        for r in references {
            for (g, c) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        nums.push(clipped as f64);
        dens.push(candidate.len().saturating_sub(n - 1));
    }
    let r = closest_ref_len(candidate.len(), references.iter().map(|r| r.len()));
    brevity_penalty(candidate.len(), r) * combine(&nums, &dens)
}

/// BLEU where each candidate n-gram type earns the best weighted clipped
/// count over the references that contain it.
pub fn delta_bleu<T: AsRef<str>>(
    candidate: &[T],
    references: &[&[T]],
    weights: &[f64],
    max_n: usize,
) -> Result<f64> {
    assert!(max_n >= 1, "max_n must be positive");
    if weights.len() != references.len() {
        return Err(Error::Data(format!(
            "{} weights for {} references",
            weights.len(),
            references.len()
        )));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w <= 1.0)) {
        return Err(Error::Data(format!("reference weight {w} outside (0, 1]")));
    }
    if candidate.is_empty() || references.is_empty() {
        return Ok(0.0);
    }
    let mut nums = Vec::with_capacity(max_n);
    let mut dens = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let cand = ngrams(candidate, n);
        let ref_counts: Vec<_> = references.iter().map(|r| ngrams(r, n)).collect();
        let credit: f64 = cand
            .iter()
            .map(|(g, &c)| {
                ref_counts
                    .iter()
                    .zip(weights)
                    .filter_map(|(rc, &w)| rc.get(g).map(|&rcount| w * c.min(rcount) as f64))
                    .fold(0.0, f64::max)
            })
            .sum();
        nums.push(credit);
        dens.push(candidate.len().saturating_sub(n - 1));
    }
    let r = closest_ref_len(candidate.len(), references.iter().map(|r| r.len()));
    Ok(brevity_penalty(candidate.len(), r) * combine(&nums, &dens))
}

/// How the neighborhood threshold `t` is compared with ROUGE-8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborhoodRule {
    /// `1 - ROUGE-8 F1 < t`.
    #[default]
    Distance,
    /// `ROUGE-8 F1 < t`, the literal comparison.
    Similarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet<'a> {
    pub input: &'a Program,
    pub members: Vec<&'a Program>,
    pub threshold: f64,
}

impl ReferenceSet<'_> {
    pub fn min_runtime(&self) -> Option<f64> {
        self.members.iter().map(|p| p.runtime).reduce(f64::min)
    }

    /// Runtime weights `min runtime / runtime(y)`, in (0, 1].
    pub fn weights(&self) -> Vec<f64> {
        let min = self.min_runtime().unwrap_or(0.0);
        self.members
            .iter()
            .map(|p| {
                if p.runtime <= min {
                    1.0
                } else if min <= 0.0 {
                    f64::EPSILON
                } else {
                    min / p.runtime
                }
            })
            .collect()
    }
}

/// Same-question programs strictly faster than `x` inside its neighborhood.
pub fn build_reference_set<'a>(
    corpus: &'a [Program],
    x: &'a Program,
    t: f64,
    rule: NeighborhoodRule,
) -> ReferenceSet<'a> {
    let members = corpus
        .iter()
        .filter(|y| y.question_id == x.question_id && y.solution_id != x.solution_id)
        .filter(|y| y.runtime < x.runtime)
        .filter(|y| {
            let sim = rouge_n(&y.tokens, &x.tokens, ROUGE_ORDER);
            match rule {
                NeighborhoodRule::Distance => 1.0 - sim < t,
                NeighborhoodRule::Similarity => sim < t,
            }
        })
        .collect();
    ReferenceSet {
        input: x,
        members,
        threshold: t,
    }
}

fn member_tokens<'a>(r: &'a ReferenceSet<'_>) -> Vec<&'a [String]> {
    r.members.iter().map(|p| p.tokens.as_slice()).collect()
}

pub fn score_correctness(candidate: &[String], r: &ReferenceSet<'_>, max_n: usize) -> f64 {
    bleu(candidate, &member_tokens(r), max_n)
}

/// `min runtime / runtime(y)` for the best exactly matched member, else 0.
pub fn score_efficiency_hard(candidate: &[String], r: &ReferenceSet<'_>) -> f64 {
    let weights = r.weights();
    r.members
        .iter()
        .zip(&weights)
        .filter(|(p, _)| p.tokens == candidate)
        .map(|(_, &w)| w)
        .fold(0.0, f64::max)
}

pub fn score_efficiency_soft(candidate: &[String], r: &ReferenceSet<'_>, max_n: usize) -> f64 {
    delta_bleu(candidate, &member_tokens(r), &r.weights(), max_n)
        .expect("reference weights lie in (0, 1]")
}

/// Mean over references of the best single-reference BLEU among `samples`.
pub fn score_diversity(samples: &[Vec<String>], r: &ReferenceSet<'_>, max_n: usize) -> f64 {
    if r.members.is_empty() || samples.is_empty() {
        return 0.0;
    }
    let total: f64 = r
        .members
        .iter()
        .map(|y| {
            samples
                .iter()
                .map(|s| bleu(s, &[y.tokens.as_slice()], max_n))
                .fold(0.0, f64::max)
        })
        .sum();
    total / r.members.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub correctness: f64,
    pub efficiency_hard: f64,
    pub efficiency_soft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputReport {
    pub solution_id: String,
    pub question_id: String,
    pub reference_size: usize,
    pub samples: Vec<Scores>,
    pub average: Scores,
    pub maximum: Scores,
    pub diversity: f64,
    pub distinct_outputs: usize,
    pub execution: Option<ExecutionCheck>,
}

/// Optional MiniLang check of generated programs, never mixed into the
/// n-gram scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionCheck {
    pub samples: usize,
    pub parsed: usize,
    pub same_output: usize,
    /// Same output and strictly fewer steps than the input.
    pub faster: usize,
}

impl ExecutionCheck {
    fn add(&mut self, o: &ExecutionCheck) {
        self.samples += o.samples;
        self.parsed += o.parsed;
        self.same_output += o.same_output;
        self.faster += o.faster;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub samples_per_input: usize,
    pub inputs_total: usize,
    pub inputs_scored: usize,
    pub inputs_without_references: usize,
    pub average: Scores,
    pub maximum: Scores,
    pub diversity: f64,
    pub execution: Option<ExecutionCheck>,
    pub per_input: Vec<InputReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Samples per input for models without discrete latents.
    pub samples: usize,
    pub temperature: f64,
    pub neighborhood: f64,
    pub rule: NeighborhoodRule,
    pub max_n: usize,
    pub max_len: usize,
    pub seed: u64,
    pub execute: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 16,
            temperature: 0.8,
            neighborhood: DEFAULT_NEIGHBORHOOD,
            rule: NeighborhoodRule::Distance,
            max_n: DEFAULT_MAX_N,
            max_len: 256,
            seed: 7,
            execute: false,
        }
    }
}

fn mean_scores(xs: &[Scores]) -> Scores {
    let n = xs.len().max(1) as f64;
    Scores {
        correctness: xs.iter().map(|s| s.correctness).sum::<f64>() / n,
        efficiency_hard: xs.iter().map(|s| s.efficiency_hard).sum::<f64>() / n,
        efficiency_soft: xs.iter().map(|s| s.efficiency_soft).sum::<f64>() / n,
    }
}

fn max_scores(xs: &[Scores]) -> Scores {
    Scores {
        correctness: xs.iter().map(|s| s.correctness).fold(0.0, f64::max),
        efficiency_hard: xs.iter().map(|s| s.efficiency_hard).fold(0.0, f64::max),
        efficiency_soft: xs.iter().map(|s| s.efficiency_soft).fold(0.0, f64::max),
    }
}

/// Runs `x` and every sample through the MiniLang interpreter using the
/// input's own names.
pub fn execution_check(x: &Program, samples: &[Vec<String>]) -> ExecutionCheck {
    let run = |tokens: &[String], map: &CanonMap| -> Option<minilang::ExecResult> {
        let toks = tokens_from_texts(tokens).ok()?;
        let src = crate::corpus::texts(&decanonicalize(&toks, map)).join(" ");
        let prog = minilang::parse(&src).ok()?;
        Some(minilang::interpret(&prog, minilang::DEFAULT_STEP_LIMIT))
    };
    let mut check = ExecutionCheck {
        samples: samples.len(),
        ..Default::default()
    };
    let Some(base) = run(&x.tokens, &x.canon_map).filter(|r| r.ok()) else {
        return check;
    };
    for s in samples {
        if let Some(r) = run(s, &x.canon_map) {
            check.parsed += 1;
            if r.ok() && r.output == base.output {
                check.same_output += 1;
                if r.steps < base.steps {
                    check.faster += 1;
                }
            }
        }
    }
    check
}

/// Scores `n` outputs per test input: one greedy output per latent for VQ
/// kinds, otherwise `cfg.samples` draws.
pub fn evaluate_model(
    model: &Model<f32>,
    vocab: &Vocab,
    test_inputs: &[&Program],
    corpus: &[Program],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if cfg.samples == 0 {
        return Err(Error::Config("at least one sample per input is required".into()));
    }
    let mut per_input = Vec::new();
    let mut excluded = 0;
    let mut execution = cfg.execute.then(ExecutionCheck::default);
    let mut n_samples = cfg.samples;
    for (i, x) in test_inputs.iter().enumerate() {
        let r = build_reference_set(corpus, x, cfg.neighborhood, cfg.rule);
        if r.members.is_empty() {
            excluded += 1;
            continue;
        }
        let ids = vocab.encode(&x.tokens);
        let outs = model.suggestions(
            &ids,
            cfg.samples,
            cfg.temperature,
            cfg.max_len,
            cfg.seed.wrapping_add(i as u64),
        )?;
        n_samples = outs.len();
        let samples: Vec<Vec<String>> = outs.iter().map(|g| vocab.decode(&g.ids)).collect();
        let scores: Vec<Scores> = samples
            .iter()
            .map(|s| Scores {
                correctness: score_correctness(s, &r, cfg.max_n),
                efficiency_hard: score_efficiency_hard(s, &r),
                efficiency_soft: score_efficiency_soft(s, &r, cfg.max_n),
            })
            .collect();
        let mut distinct = samples.clone();
        distinct.sort();
        distinct.dedup();
        let exec = cfg.execute.then(|| execution_check(x, &samples));
        if let (Some(total), Some(e)) = (execution.as_mut(), exec.as_ref()) {
            total.add(e);
        }
        per_input.push(InputReport {
            solution_id: x.solution_id.clone(),
            question_id: x.question_id.clone(),
            reference_size: r.members.len(),
            average: mean_scores(&scores),
            maximum: max_scores(&scores),
            diversity: score_diversity(&samples, &r, cfg.max_n),
            distinct_outputs: distinct.len(),
            samples: scores,
            execution: exec,
        });
    }
    let averages: Vec<Scores> = per_input.iter().map(|p| p.average).collect();
    let maxima: Vec<Scores> = per_input.iter().map(|p| p.maximum).collect();
    let diversity = if per_input.is_empty() {
        0.0
    } else {
        per_input.iter().map(|p| p.diversity).sum::<f64>() / per_input.len() as f64
    };
    Ok(MetricsReport {
        model: model.kind().to_string(),
        samples_per_input: n_samples,
        inputs_total: test_inputs.len(),
        inputs_scored: per_input.len(),
        inputs_without_references: excluded,
        average: mean_scores(&averages),
        maximum: mean_scores(&maxima),
        diversity,
        execution,
        per_input,
    })
}
