//! Learning-rate schedule, the training loop, codebook diagnostics and
//! checkpoint files.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;
use neural::optim::{clip_global_norm, Adam, AdamConfig};
use neural::vq::EmaCodebook;
use neural::{Graph, ParamStore, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind};
use crate::pairing::SplitSpec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CEJC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One training example of unframed token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Pairs drawn per epoch; `None` means one full pass. The shuffled order
    /// carries over between epochs, so short epochs still cycle through all
    /// pairs.
    pub epoch_pairs: Option<usize>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Validation pairs scored per epoch; `None` scores all of them.
    pub valid_limit: Option<usize>,
    /// Re-seed codebook entries unused for a whole epoch.
    pub reseed_dead_codes: bool,
    /// Exponential-moving-average codebook updates instead of gradient ones.
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 32,
            epochs: 10,
            epoch_pairs: Some(1600),
            max_steps: None,
            peak_lr: 3e-3,
            warmup_steps: 50,
            clip_norm: 1.0,
            seed: 7,
            valid_limit: Some(200),
            reseed_dead_codes: true,
            ema_decay: None,
        }
    }
}

impl TrainConfig {
    /// Paper-scale architecture and optimization settings.
    pub fn paper_scale(kind: ModelKind) -> Self {
        Self {
            model: ModelConfig::paper_scale(kind),
            batch_size: 16,
            epochs: 100,
            epoch_pairs: None,
            peak_lr: 0.01,
            warmup_steps: 500,
            valid_limit: None,
            reseed_dead_codes: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.warmup_steps == 0 {
            return Err(Error::Config(
                "batch_size, epochs and warmup_steps must be positive".into(),
            ));
        }
        if self.epoch_pairs == Some(0) || self.max_steps == Some(0) || self.valid_limit == Some(0) {
            return Err(Error::Config(
                "epoch_pairs, max_steps and valid_limit must be positive when set".into(),
            ));
        }
        if !(self.peak_lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("peak_lr and clip_norm must be positive".into()));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!("ema_decay {d} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Linear warmup to `peak` over `warmup` steps, then `peak * sqrt(warmup / step)`.
pub fn lr_schedule(step: usize, peak: f64, warmup: usize) -> f64 {
    assert!(step >= 1 && warmup >= 1, "schedule is defined from step 1");
    if step <= warmup {
        peak * step as f64 / warmup as f64
    } else {
        peak * (warmup as f64 / step as f64).sqrt()
    }
}

/// Usage fractions of each codebook entry and `exp(entropy)` of them.
pub fn codebook_usage(assignments: &[usize], k: usize) -> (Vec<f64>, f64) {
    assert!(!assignments.is_empty(), "no assignments recorded");
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let n = assignments.len() as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let entropy: f64 = fractions
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    (fractions, entropy.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_ce: f64,
    pub valid_loss: f64,
    pub valid_ce: f64,
    /// Per-entry fraction of validation pairs assigned to each latent.
    pub codebook_usage: Option<Vec<f64>>,
    pub perplexity: Option<f64>,
    /// Mean per-dimension KL over validation pairs.
    pub kl_per_dim: Option<Vec<f64>>,
    pub reseeded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub train_config: TrainConfig,
    pub vocab: Vocab,
    pub vocab_size: usize,
    /// Optimizer step at which the stored parameters were taken.
    pub step: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// How the training pairs were split, when known.
    #[serde(default)]
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, meta: CheckpointMeta) -> Self {
        let tensors = model
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.tensor.clone()))
            .collect();
        Self { meta, tensors }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        let cfg = self.meta.train_config.model.clone();
        let mut model = Model::<f32>::new(cfg, self.meta.vocab_size, 0)?;
        if model.store.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} model needs {} tensors, file has {}",
                self.meta.model_kind,
                model.store.len(),
                self.tensors.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            if t.shape() != model.store.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    model.store.get(id).shape()
                )));
            }
            *model.store.get_mut(id) = t.clone();
        }
        Ok(model)
    }

    /// Codebook usage recorded at the selected epoch.
    pub fn usage(&self) -> Option<&[f64]> {
        self.meta
            .history
            .iter()
            .find(|r| r.epoch == self.meta.best_epoch)
            .and_then(|r| r.codebook_usage.as_deref())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let len_at = out.len();
        out.extend_from_slice(&0u64.to_le_bytes());
        let start = out.len();
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let region = (out.len() - start) as u64;
        out[len_at..start].copy_from_slice(&region.to_le_bytes());
        let checksum = fnv1a(&out[start..]);
        out.extend_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let meta_len = usize::try_from(r.u64()?)
            .map_err(|_| Error::Checkpoint("metadata length overflows".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let region = usize::try_from(r.u64()?)
            .map_err(|_| Error::Checkpoint("tensor region length overflows".into()))?;
        let end = r
            .pos
            .checked_add(region)
            .ok_or_else(|| Error::Checkpoint("tensor region length overflows".into()))?;
        match bytes.len().cmp(&(end.saturating_add(8))) {
            std::cmp::Ordering::Less => return Err(Error::Checkpoint("truncated file".into())),
            std::cmp::Ordering::Greater => {
                return Err(Error::Checkpoint("trailing bytes after checksum".into()))
            }
            std::cmp::Ordering::Equal => {}
        }
        let stored = u64::from_le_bytes(bytes[end..].try_into().expect("8 bytes"));
        if fnv1a(&bytes[r.pos..end]) != stored {
            return Err(Error::Checkpoint("checksum mismatch in tensor data".into()));
        }
        let mut tensors = BTreeMap::new();
        let mut tr = Reader {
            bytes: &bytes[..end],
            pos: r.pos,
        };
        while tr.pos < end {
            let name_len = tr.u16()? as usize;
            let name = String::from_utf8(tr.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = tr.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(tr.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = tr.take(n.checked_mul(4).ok_or_else(|| {
                Error::Checkpoint(format!("tensor '{name}' is too large"))
            })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor '{name}'")));
            }
        }
        Ok(Self { meta, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ck.to_bytes()?;
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::Io(format!("cannot write checkpoint {}: {e}", path.display())))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

/// Byte hash of every parameter, for checking that evaluation mutates nothing.
pub fn param_fingerprint<T: Scalar>(store: &ParamStore<T>) -> u64 {
    let mut h = FnvHasher::default();
    for (_, p) in store.iter() {
        h.write(p.name.as_bytes());
        for v in p.tensor.data() {
            h.write_u64(v.as_f64().to_bits());
        }
    }
    h.finish()
}

#[derive(Debug, Clone, Default)]
struct Totals {
    loss: f64,
    ce: f64,
    n: usize,
}

impl Totals {
    fn mean(&self) -> (f64, f64) {
        let n = self.n.max(1) as f64;
        (self.loss / n, self.ce / n)
    }
}

/// Scores validation pairs without touching parameters.
pub struct ValidScores {
    pub loss: f64,
    pub ce: f64,
    pub latents: Vec<usize>,
    pub kl_per_dim: Option<Vec<f64>>,
}

pub fn evaluate_loss<T: Scalar>(model: &Model<T>, examples: &[Example]) -> Result<ValidScores> {
    let mut totals = Totals::default();
    let mut latents = Vec::new();
    let mut kl_sum: Option<Vec<f64>> = None;
    for ex in examples {
        let mut g = Graph::new(&model.store);
        let f = model.forward(&mut g, &ex.x, &ex.y)?;
        totals.loss += g.scalar(f.loss).as_f64();
        totals.ce += g.scalar(f.cross_entropy).as_f64();
        totals.n += 1;
        if let Some(k) = f.latent {
            latents.push(k);
        }
        if let Some(kl) = f.kl {
            let acc = kl_sum.get_or_insert_with(|| vec![0.0; model.config.d_model]);
            for (a, v) in acc.iter_mut().zip(g.value(kl)) {
                *a += v.as_f64();
            }
        }
    }
    let (loss, ce) = totals.mean();
    let n = examples.len().max(1) as f64;
    Ok(ValidScores {
        loss,
        ce,
        latents,
        kl_per_dim: kl_sum.map(|v| v.into_iter().map(|x| x / n).collect()),
    })
}

pub struct TrainOutcome {
    /// Parameters at the best validation loss.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Trains a fresh model. `on_epoch` sees every epoch record as it is made.
pub fn train(
    train_set: &[Example],
    valid_set: &[Example],
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let mut model = Model::<f32>::new(cfg.model.clone(), vocab.len(), cfg.seed)?;
    let mut adam = Adam::new(&model.store, AdamConfig::default());
    let mut frozen = vec![false; model.store.len()];
    let mut ema = None;
    if let (Some(decay), Some(id)) = (cfg.ema_decay, model.codebook_id()) {
        frozen[id.0] = true;
        ema = Some(EmaCodebook::new(model.store.get(id), decay));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_7EA1);

    let valid: Vec<Example> = match cfg.valid_limit {
        Some(n) if n < valid_set.len() => {
            let mut idx: Vec<usize> = (0..valid_set.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7A11D));
            let mut keep = idx[..n].to_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| valid_set[i].clone()).collect()
        }
        _ => valid_set.to_vec(),
    };
    let monitor = if valid.is_empty() { &train_set[..train_set.len().min(256)] } else { &valid[..] };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let per_epoch = cfg.epoch_pairs.unwrap_or(train_set.len());
    let mut step = 0usize;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, usize, ParamStore<f32>)> = None;
    let k = model.codebook_size();
    let mut recent_edits: Vec<Vec<f32>> = Vec::new();

    'epochs: for epoch in 1..=cfg.epochs {
        let mut totals = Totals::default();
        let mut used = vec![false; k.unwrap_or(0)];
        let mut drawn = 0;
        let mut lr = 0.0;
        while drawn < per_epoch {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let take = cfg.batch_size.min(per_epoch - drawn);
            let mut batch = Vec::with_capacity(take);
            for _ in 0..take {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
            drawn += take;
            step += 1;
            lr = lr_schedule(step, cfg.peak_lr, cfg.warmup_steps);
            let mut grads = model.store.zero_grads();
            let scale = 1.0 / batch.len() as f32;
            let mut assignments = Vec::new();
            for &i in &batch {
                let ex = &train_set[i];
                let mut g = Graph::training(&model.store, rng.gen());
                let f = model.forward(&mut g, &ex.x, &ex.y)?;
                let loss = g.scalar(f.loss);
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        step,
                        detail: format!(
                            "example {i} (|x| = {}, |y| = {}), cross-entropy {}",
                            ex.x.len(),
                            ex.y.len(),
                            g.scalar(f.cross_entropy)
                        ),
                    });
                }
                totals.loss += loss as f64;
                totals.ce += g.scalar(f.cross_entropy) as f64;
                totals.n += 1;
                if let (Some(idx), Some(e)) = (f.latent, f.edit) {
                    used[idx] = true;
                    let e = g.value(e).to_vec();
                    if ema.is_some() {
                        assignments.push((idx, e.clone()));
                    }
                    if recent_edits.len() == 256 {
                        recent_edits.remove(0);
                    }
                    recent_edits.push(e);
                }
                let grad = g.backward(f.loss)?;
                grad.accumulate_into(&mut grads, scale);
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.store, &grads, lr, &frozen);
            if let (Some(ema), Some(id)) = (ema.as_mut(), model.codebook_id()) {
                ema.update(model.store.get_mut(id), &assignments);
            }
        }
        if totals.n == 0 {
            break 'epochs;
        }

        let mut reseeded = 0;
        if cfg.reseed_dead_codes && !recent_edits.is_empty() {
            if let Some(id) = model.codebook_id() {
                let dead: Vec<usize> = (0..used.len()).filter(|&j| !used[j]).collect();
                let entries = model.store.get_mut(id);
                let d = entries.dims2().1;
                for j in dead {
                    let src = &recent_edits[rng.gen_range(0..recent_edits.len())];
                    entries.data_mut()[j * d..(j + 1) * d].copy_from_slice(src);
                    reseeded += 1;
                }
            }
        }

        let scores = evaluate_loss(&model, monitor)?;
        let (train_loss, train_ce) = totals.mean();
        let (usage, perplexity) = match k {
            Some(k) if !scores.latents.is_empty() => {
                let (f, p) = codebook_usage(&scores.latents, k);
                (Some(f), Some(p))
            }
            _ => (None, None),
        };
        let record = EpochRecord {
            epoch,
            step,
            lr,
            train_loss,
            train_ce,
            valid_loss: scores.loss,
            valid_ce: scores.ce,
            codebook_usage: usage,
            perplexity,
            kl_per_dim: scores.kl_per_dim,
            reseeded,
        };
        if !record.valid_loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("validation loss at epoch {epoch}"),
            });
        }
        on_epoch(&record);
        if best.as_ref().map_or(true, |b| record.valid_loss < b.0) {
            best = Some((record.valid_loss, epoch, step, model.store.clone()));
        }
        history.push(record);
    }

    let (_, best_epoch, best_step, store) = best.ok_or_else(|| Error::Data("no epoch completed".into()))?;
    model.store = store;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        model_kind: cfg.model.kind,
        train_config: cfg.clone(),
        vocab: vocab.clone(),
        vocab_size: vocab.len(),
        step: best_step,
        best_epoch,
        history: history.clone(),
        split: None,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_model(&model, meta),
        history,
    })
}
