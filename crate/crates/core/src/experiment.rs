//! Latent interpretability diagnostics: family purity and PCA of program
//! encodings grouped by latent.

use std::collections::BTreeMap;

use neural::pca::Pca;
use serde::{Deserialize, Serialize};

use crate::corpus::{Program, Vocab};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind};
use crate::pairing::{filter_max_improvement, index_by_id, resolve, split, ProgramPair, Split, SplitSpec};
use crate::training::Example;

/// Encoded training and validation pairs for one model.
pub struct Dataset {
    pub vocab: Vocab,
    pub split: Split,
    /// Pairs behind `train` and `valid`, index-aligned with them.
    pub train_pairs: Vec<ProgramPair>,
    pub valid_pairs: Vec<ProgramPair>,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub skipped_too_long: usize,
}

fn fits(model: &ModelConfig, ex: &Example) -> bool {
    match model.kind {
        ModelKind::VqvaeConcat => ex.x.len() + ex.y.len() + 3 <= model.max_len,
        _ => ex.x.len().max(ex.y.len()) + 2 <= model.max_len,
    }
}

/// Splits `pairs` by input program, applies the max-improvement filter for
/// `seq2seq-max` after splitting (so held-out inputs match the other
/// models), and encodes both sides with a vocabulary over the corpus.
pub fn prepare_dataset(
    programs: &[Program],
    pairs: &[ProgramPair],
    spec: &SplitSpec,
    model: &ModelConfig,
) -> Result<Dataset> {
    let vocab = Vocab::build(programs);
    let sp = split(pairs, spec)?;
    let (train_src, valid_src) = if model.kind == ModelKind::Seq2seqMax {
        (filter_max_improvement(&sp.train), filter_max_improvement(&sp.valid))
    } else {
        (sp.train.clone(), sp.valid.clone())
    };
    let by_id = index_by_id(programs);
    let mut skipped = 0;
    let mut encode = |src: &[ProgramPair]| -> Result<(Vec<ProgramPair>, Vec<Example>)> {
        let mut kept = Vec::new();
        let mut out = Vec::new();
        for (p, (x, y)) in src.iter().zip(resolve(src, &by_id)?) {
            let ex = Example {
                x: vocab.encode(&x.tokens),
                y: vocab.encode(&y.tokens),
            };
            if fits(model, &ex) {
                kept.push(p.clone());
                out.push(ex);
            } else {
                skipped += 1;
            }
        }
        Ok((kept, out))
    };
    let (train_pairs, train) = encode(&train_src)?;
    let (valid_pairs, valid) = encode(&valid_src)?;
    Ok(Dataset {
        vocab,
        split: sp,
        train_pairs,
        valid_pairs,
        train,
        valid,
        skipped_too_long: skipped,
    })
}

/// Majority-vote purity: each latent is credited with the count of its most
/// frequent label, and the credits are divided by the number of items.
pub fn purity<L: Ord + Clone>(latents: &[usize], labels: &[L]) -> f64 {
    assert_eq!(latents.len(), labels.len(), "one label per latent");
    if latents.is_empty() {
        return 0.0;
    }
    let mut table: BTreeMap<usize, BTreeMap<L, usize>> = BTreeMap::new();
    for (k, l) in latents.iter().zip(labels) {
        *table.entry(*k).or_default().entry(l.clone()).or_insert(0) += 1;
    }
    let hits: usize = table
        .values()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / latents.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub latent: usize,
    pub question_id: String,
    pub slow_id: String,
    pub fast_id: String,
    pub slow: Vec<f64>,
    pub fast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDisplacement {
    pub latent: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    pub mean_norm: f64,
    /// Root mean squared deviation of displacements from their mean.
    pub spread: f64,
}

impl LatentDisplacement {
    pub fn clustered(&self) -> bool {
        self.mean_norm > 2.0 * self.spread
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub explained_variance_ratio: Vec<f64>,
    pub points: Vec<PcaPoint>,
    pub displacements: Vec<LatentDisplacement>,
}

pub struct PairRef<'a> {
    pub question_id: &'a str,
    pub slow_id: &'a str,
    pub fast_id: &'a str,
    pub example: &'a Example,
}

/// Projects slow and fast program encodings onto the top `k` principal
/// components fitted on both sides together, grouping pairs by latent.
pub fn pca_by_latent(model: &Model<f32>, pairs: &[PairRef<'_>], k: usize) -> Result<PcaReport> {
    if !model.kind().is_vq() {
        return Err(Error::Config(format!(
            "{} has no discrete latents to group by",
            model.kind()
        )));
    }
    let mut rows = Vec::with_capacity(2 * pairs.len());
    let mut latents = Vec::with_capacity(pairs.len());
    for p in pairs {
        let slow = model.encode_program(&p.example.x)?;
        let fast = model.encode_program(&p.example.y)?;
        rows.push(slow.iter().map(|&v| v as f64).collect::<Vec<_>>());
        rows.push(fast.iter().map(|&v| v as f64).collect::<Vec<_>>());
        latents.push(model.assign_latent(&p.example.x, &p.example.y)?);
    }
    let pca = Pca::fit(&rows, k)?;
    let points: Vec<PcaPoint> = pairs
        .iter()
        .zip(&latents)
        .enumerate()
        .map(|(i, (p, &latent))| PcaPoint {
            latent,
            question_id: p.question_id.to_string(),
            slow_id: p.slow_id.to_string(),
            fast_id: p.fast_id.to_string(),
            slow: pca.project(&rows[2 * i]),
            fast: pca.project(&rows[2 * i + 1]),
        })
        .collect();
    Ok(PcaReport {
        explained_variance_ratio: pca.explained_variance_ratio.clone(),
        displacements: displacements(&points),
        points,
    })
}

pub fn displacements(points: &[PcaPoint]) -> Vec<LatentDisplacement> {
    let mut groups: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for p in points {
        let d = p.fast.iter().zip(&p.slow).map(|(f, s)| f - s).collect();
        groups.entry(p.latent).or_default().push(d);
    }
    groups
        .into_iter()
        .map(|(latent, ds)| {
            let n = ds.len() as f64;
            let dim = ds[0].len();
            let mean: Vec<f64> = (0..dim)
                .map(|j| ds.iter().map(|d| d[j]).sum::<f64>() / n)
                .collect();
            let spread = (ds
                .iter()
                .map(|d| d.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>())
                .sum::<f64>()
                / n)
                .sqrt();
            LatentDisplacement {
                latent,
                count: ds.len(),
                mean_norm: mean.iter().map(|m| m * m).sum::<f64>().sqrt(),
                mean,
                spread,
            }
        })
        .collect()
}

/// CSV with one row per pair: latent, ids, then slow and fast coordinates.
pub fn pca_csv(report: &PcaReport) -> String {
    let k = report.points.first().map_or(0, |p| p.slow.len());
    let mut s = String::from("latent,question_id,slow_id,fast_id");
    for i in 0..k {
        s.push_str(&format!(",slow_pc{}", i + 1));
    }
    for i in 0..k {
        s.push_str(&format!(",fast_pc{}", i + 1));
    }
    s.push('\n');
    for p in &report.points {
        s.push_str(&format!("{},{},{},{}", p.latent, p.question_id, p.slow_id, p.fast_id));
        for v in p.slow.iter().chain(&p.fast) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}
