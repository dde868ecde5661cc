//! The Edit-VQVAE, the seq2seq baseline and the two ablations.
//!
//! All kinds share one encoder-decoder backbone: the encoder reads
//! `[BOS x EOS]`, the decoder reads `[BOS y]` and predicts `[y EOS]`. Latent
//! kinds additionally condition the decoder on an edit vector.

use std::fmt;
use std::str::FromStr;

use neural::nn::{sinusoidal_table, AttentionPool, Decoder, Encoder, Linear, TransformerConfig};
use neural::vq::{quantize, Codebook};
use neural::{Graph, NeuralError, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, PAD, SEP, UNK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    EditVqvae,
    Seq2seq,
    /// The seq2seq architecture trained on max-improvement pairs only.
    Seq2seqMax,
    VqvaeConcat,
    EditVae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::EditVqvae,
        ModelKind::Seq2seq,
        ModelKind::Seq2seqMax,
        ModelKind::VqvaeConcat,
        ModelKind::EditVae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::EditVqvae => "edit-vqvae",
            ModelKind::Seq2seq => "seq2seq",
            ModelKind::Seq2seqMax => "seq2seq-max",
            ModelKind::VqvaeConcat => "vqvae-concat",
            ModelKind::EditVae => "edit-vae",
        }
    }

    pub fn is_vq(self) -> bool {
        matches!(self, ModelKind::EditVqvae | ModelKind::VqvaeConcat)
    }

    pub fn is_seq2seq(self) -> bool {
        matches!(self, ModelKind::Seq2seq | ModelKind::Seq2seqMax)
    }

    fn uses_pool(self) -> bool {
        matches!(self, ModelKind::EditVqvae | ModelKind::EditVae)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!("unknown model kind '{s}' (expected edit-vqvae, seq2seq, seq2seq-max, vqvae-concat or edit-vae)")
            })
    }
}

/// Where the edit vector enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Added to every decoder input embedding.
    #[default]
    Decoder,
    /// Added to the encoder input embeddings of `x`, which is re-encoded.
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Codebook size K for the VQ kinds.
    pub codebook_size: usize,
    pub max_len: usize,
    pub conditioning: Conditioning,
    /// Commitment weight.
    pub beta: f64,
    pub kl_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::EditVqvae,
            d_model: 64,
            d_ff: 256,
            layers: 2,
            heads: 4,
            dropout: 0.0,
            codebook_size: 16,
            max_len: 512,
            conditioning: Conditioning::Decoder,
            beta: 0.25,
            kl_weight: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn paper_scale(kind: ModelKind) -> Self {
        Self {
            kind,
            d_model: 128,
            d_ff: 512,
            layers: 6,
            heads: 8,
            codebook_size: 64,
            dropout: 0.1,
            ..Self::default()
        }
    }

    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            d_model: self.d_model,
            d_ff: self.d_ff,
            layers: self.layers,
            heads: self.heads,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.layers == 0 || self.d_ff == 0 {
            return Err(Error::Config("layers and d_ff must be positive".into()));
        }
        if self.kind.is_vq() && self.codebook_size < 2 {
            return Err(Error::Config("codebook size must be at least 2".into()));
        }
        if self.max_len < 4 {
            return Err(Error::Config("max_len must be at least 4".into()));
        }
        if !(self.beta >= 0.0) || !(self.kl_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConcatTower {
    embed: ParamId,
    encoder: Encoder,
    pool: AttentionPool,
    proj: Linear,
}

#[derive(Debug, Clone)]
struct GaussianHead {
    mu: Linear,
    logvar: Linear,
}

/// Parameters and structure of one model.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub store: ParamStore<T>,
    pe: Tensor<T>,
    pe_wide: Option<Tensor<T>>,
    embed: ParamId,
    encoder: Encoder,
    decoder: Decoder,
    out: Linear,
    pool: Option<AttentionPool>,
    codebook: Option<Codebook>,
    concat: Option<ConcatTower>,
    gaussian: Option<GaussianHead>,
}

/// Loss terms of one teacher-forced example.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub loss: Var,
    pub cross_entropy: Var,
    pub logits: Var,
    /// Pre-quantization (or pre-Gaussian-head) edit vector.
    pub edit: Option<Var>,
    pub latent: Option<usize>,
    pub codebook_loss: Option<Var>,
    pub commitment_loss: Option<Var>,
    /// Per-dimension KL to the standard normal (`1 x d`).
    pub kl: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub mode: DecodeMode,
    pub max_len: usize,
    pub seed: u64,
}

impl DecodingConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            mode: DecodeMode::Greedy,
            max_len,
            seed: 0,
        }
    }

    pub fn sample(temperature: f64, max_len: usize, seed: u64) -> Self {
        Self {
            mode: DecodeMode::Sample { temperature },
            max_len,
            seed,
        }
    }
}

/// One decoded sequence without framing tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub ids: Vec<usize>,
    /// Sum of untempered log-probabilities of the emitted tokens, EOS
    /// included when reached.
    pub log_prob: f64,
    pub finished: bool,
}

/// Closed-form KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}

pub fn frame_source(x: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(x.len() + 2);
    v.push(BOS);
    v.extend_from_slice(x);
    v.push(EOS);
    v
}

pub fn decoder_input(y: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(y.len() + 1);
    v.push(BOS);
    v.extend_from_slice(y);
    v
}

pub fn decoder_target(y: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(y.len() + 1);
    v.extend_from_slice(y);
    v.push(EOS);
    v
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size <= SEP {
            return Err(Error::Config("vocabulary is missing the special tokens".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let tc = config.transformer();
        let mut store = ParamStore::new();
        let embed = store.add_normal("embed", vocab_size, d, 1.0 / (d as f64).sqrt(), &mut rng);
        let encoder = Encoder::new(&mut store, "encoder", &tc, &mut rng);
        let decoder = Decoder::new(&mut store, "decoder", &tc, &mut rng);
        let out = Linear::new(&mut store, "out", d, vocab_size, &mut rng);
        let pool = config
            .kind
            .uses_pool()
            .then(|| AttentionPool::new(&mut store, "pool", d, config.heads, &mut rng));
        let concat = (config.kind == ModelKind::VqvaeConcat).then(|| {
            let wide = TransformerConfig {
                d_model: 2 * d,
                d_ff: 2 * config.d_ff,
                ..tc
            };
            ConcatTower {
                embed: store.add_normal(
                    "concat.embed",
                    vocab_size,
                    2 * d,
                    1.0 / ((2 * d) as f64).sqrt(),
                    &mut rng,
                ),
                encoder: Encoder::new(&mut store, "concat.encoder", &wide, &mut rng),
                pool: AttentionPool::new(&mut store, "concat.pool", 2 * d, config.heads, &mut rng),
                proj: Linear::new(&mut store, "concat.proj", 2 * d, d, &mut rng),
            }
        });
        let gaussian = (config.kind == ModelKind::EditVae).then(|| GaussianHead {
            mu: Linear::new(&mut store, "vae.mu", d, d, &mut rng),
            logvar: Linear::new(&mut store, "vae.logvar", d, d, &mut rng),
        });
        let codebook = config
            .kind
            .is_vq()
            .then(|| Codebook::new(&mut store, "codebook", config.codebook_size, d, &mut rng));
        let pe = sinusoidal_table(config.max_len, d);
        let pe_wide = concat.as_ref().map(|_| sinusoidal_table(config.max_len, 2 * d));
        Ok(Self {
            config,
            vocab_size,
            store,
            pe,
            pe_wide,
            embed,
            encoder,
            decoder,
            out,
            pool,
            codebook,
            concat,
            gaussian,
        })
    }

    /// Rebuilds the structure for `config` and installs `store`, checking
    /// that names and shapes match.
    pub fn from_store(config: ModelConfig, vocab_size: usize, store: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, vocab_size, 0)?;
        if store.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for ((_, want), (_, got)) in model.store.iter().zip(store.iter()) {
            if want.name != got.name || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' {:?} does not match expected '{}' {:?}",
                    got.name,
                    got.tensor.shape(),
                    want.name,
                    want.tensor.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            store: self.store.cast(),
            pe: self.pe.cast(),
            pe_wide: self.pe_wide.as_ref().map(|t| t.cast()),
            embed: self.embed,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            out: self.out.clone(),
            pool: self.pool.clone(),
            codebook: self.codebook.clone(),
            concat: self.concat.clone(),
            gaussian: self.gaussian.clone(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn codebook_size(&self) -> Option<usize> {
        self.codebook.as_ref().map(|c| c.size)
    }

    pub fn codebook_id(&self) -> Option<ParamId> {
        self.codebook.as_ref().map(|c| c.entries)
    }

    /// Number of scalars in the tensors whose names start with any prefix.
    pub fn param_count(&self, prefixes: &[&str]) -> usize {
        self.store.numel_with_prefix(prefixes)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n > self.config.max_len {
            return Err(Error::Neural(NeuralError::SequenceTooLong {
                len: n,
                max: self.config.max_len,
            }));
        }
        Ok(())
    }

    /// Scaled token embeddings plus positional encodings.
    fn embed_tokens<'a>(&'a self, g: &mut Graph<'a, T>, ids: &[usize], offset: usize) -> Result<Var> {
        self.check_len(offset + ids.len())?;
        let table = g.param(self.embed);
        let e = g.embedding(table, ids)?;
        let e = g.scale(e, (self.config.d_model as f64).sqrt())?;
        let d = self.config.d_model;
        let pe = g.constant_slice(ids.len(), d, &self.pe.data()[offset * d..(offset + ids.len()) * d]);
        Ok(g.add(e, pe)?)
    }

    fn encode_states<'a>(&'a self, g: &mut Graph<'a, T>, x: &[usize], shift: Option<Var>) -> Result<Var> {
        let framed = frame_source(x);
        let mut h = self.embed_tokens(g, &framed, 0)?;
        if let Some(z) = shift {
            h = g.add_row(h, z)?;
        }
        let h = g.dropout(h, self.config.dropout)?;
        Ok(self.encoder.forward(g, h)?)
    }

    fn pooled<'a>(&'a self, g: &mut Graph<'a, T>, states: Var) -> Result<Var> {
        let pool = self
            .pool
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no program pooler", self.kind())))?;
        Ok(pool.forward(g, states)?)
    }

    fn concat_edit<'a>(&'a self, g: &mut Graph<'a, T>, x: &[usize], y: &[usize]) -> Result<Var> {
        let tower = self.concat.as_ref().expect("concat tower");
        let mut ids = Vec::with_capacity(x.len() + y.len() + 3);
        ids.push(BOS);
        ids.extend_from_slice(x);
        ids.push(SEP);
        ids.extend_from_slice(y);
        ids.push(EOS);
        self.check_len(ids.len())?;
        let d2 = 2 * self.config.d_model;
        let table = g.param(tower.embed);
        let e = g.embedding(table, &ids)?;
        let e = g.scale(e, (d2 as f64).sqrt())?;
        let pe = self.pe_wide.as_ref().expect("wide table");
        let pe = g.constant_slice(ids.len(), d2, &pe.data()[..ids.len() * d2]);
        let h = g.add(e, pe)?;
        let h = g.dropout(h, self.config.dropout)?;
        let states = tower.encoder.forward(g, h)?;
        let pooled = tower.pool.forward(g, states)?;
        Ok(tower.proj.forward(g, pooled)?)
    }

    /// Runs the decoder over `[BOS y]` conditioned on `memory` and `z`.
    fn decode_logits<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        y: &[usize],
        memory: Var,
        z: Option<Var>,
    ) -> Result<Var> {
        let input = decoder_input(y);
        let mut h = self.embed_tokens(g, &input, 0)?;
        if let (Some(z), Conditioning::Decoder) = (z, self.config.conditioning) {
            h = g.add_row(h, z)?;
        }
        let h = g.dropout(h, self.config.dropout)?;
        let states = self.decoder.forward(g, h, memory)?;
        Ok(self.out.forward(g, states)?)
    }

    /// Teacher-forced forward pass and loss for one `(x, y)` pair of
    /// unframed token ids.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a, T>, x: &[usize], y: &[usize]) -> Result<Forward> {
        let kind = self.kind();
        let x_states = self.encode_states(g, x, None)?;
        let mut edit = None;
        let mut latent = None;
        let mut codebook_loss = None;
        let mut commitment_loss = None;
        let mut kl = None;
        let z = match kind {
            ModelKind::Seq2seq | ModelKind::Seq2seqMax => None,
            ModelKind::EditVqvae | ModelKind::VqvaeConcat | ModelKind::EditVae => {
                let e = if kind == ModelKind::VqvaeConcat {
                    self.concat_edit(g, x, y)?
                } else {
                    let zx = self.pooled(g, x_states)?;
                    let y_states = self.encode_states(g, y, None)?;
                    let zy = self.pooled(g, y_states)?;
                    g.sub(zy, zx)?
                };
                edit = Some(e);
                if kind == ModelKind::EditVae {
                    let head = self.gaussian.as_ref().expect("gaussian head");
                    let mu = head.mu.forward(g, e)?;
                    let lv = head.logvar.forward(g, e)?;
                    let half = g.scale(lv, 0.5)?;
                    let sigma = g.exp(half)?;
                    let sigma = g.clamp_min(sigma, 1e-6)?;
                    let z = if g.is_training() {
                        let eps = g.normal_noise(1, self.config.d_model);
                        let noise = g.mul(sigma, eps)?;
                        g.add(mu, noise)?
                    } else {
                        mu
                    };
                    // 0.5 * (mu^2 + sigma^2 - 1 - 2 ln sigma), per dimension
                    let mu2 = g.mul(mu, mu)?;
                    let s2 = g.mul(sigma, sigma)?;
                    let ln_s = g.log(sigma)?;
                    let two_ln_s = g.scale(ln_s, 2.0)?;
                    let a = g.add(mu2, s2)?;
                    let a = g.sub(a, two_ln_s)?;
                    let ones = g.constant(Tensor::row_vector(vec![T::one(); self.config.d_model]));
                    let a = g.sub(a, ones)?;
                    kl = Some(g.scale(a, 0.5)?);
                    Some(z)
                } else {
                    let cb = g.param(self.codebook.as_ref().expect("codebook").entries);
                    let q = quantize(g, cb, e)?;
                    latent = Some(q.index);
                    codebook_loss = Some(q.codebook_loss);
                    commitment_loss = Some(q.commitment_loss);
                    Some(q.straight_through)
                }
            }
        };
        let memory = match (z, self.config.conditioning) {
            (Some(z), Conditioning::Encoder) => self.encode_states(g, x, Some(z))?,
            _ => x_states,
        };
        let logits = self.decode_logits(g, y, memory, z)?;
        let target = decoder_target(y);
        let ce = g.cross_entropy(logits, &target)?;
        let mut loss = ce;
        if let (Some(c), Some(m)) = (codebook_loss, commitment_loss) {
            loss = g.add(loss, c)?;
            let m = g.scale(m, self.config.beta)?;
            loss = g.add(loss, m)?;
        }
        if let Some(k) = kl {
            let total = g.sum(k)?;
            let total = g.scale(total, self.config.kl_weight)?;
            loss = g.add(loss, total)?;
        }
        Ok(Forward {
            loss,
            cross_entropy: ce,
            logits,
            edit,
            latent,
            codebook_loss,
            commitment_loss,
            kl,
        })
    }

    /// Pooled encoding of one program (inference mode).
    pub fn encode_program(&self, x: &[usize]) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.store);
        let states = self.encode_states(&mut g, x, None)?;
        let p = self.pooled(&mut g, states)?;
        Ok(g.value(p).to_vec())
    }

    /// Continuous edit vector of `(x, y)` before quantization.
    pub fn encode_edit(&self, x: &[usize], y: &[usize]) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.store);
        let e = if self.kind() == ModelKind::VqvaeConcat {
            self.concat_edit(&mut g, x, y)?
        } else {
            let sx = self.encode_states(&mut g, x, None)?;
            let zx = self.pooled(&mut g, sx)?;
            let sy = self.encode_states(&mut g, y, None)?;
            let zy = self.pooled(&mut g, sy)?;
            g.sub(zy, zx)?
        };
        Ok(g.value(e).to_vec())
    }

    /// Codebook index of the edit from `x` to `y`.
    pub fn assign_latent(&self, x: &[usize], y: &[usize]) -> Result<usize> {
        let cb = self
            .codebook
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no codebook", self.kind())))?;
        let e = self.encode_edit(x, y)?;
        Ok(neural::vq::nearest_index(
            self.store.get(cb.entries).data(),
            cb.dim,
            &e,
        ))
    }

    pub fn codebook_entry(&self, k: usize) -> Result<Vec<T>> {
        let cb = self
            .codebook
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no codebook", self.kind())))?;
        if k >= cb.size {
            return Err(Error::Data(format!(
                "latent {k} out of range for a codebook of {}",
                cb.size
            )));
        }
        Ok(self.store.get(cb.entries).row(k).to_vec())
    }

    /// Autoregressive decoding from `x` with an optional edit vector.
    pub fn decode(&self, x: &[usize], z: Option<&[T]>, cfg: &DecodingConfig) -> Result<Generated> {
        if let DecodeMode::Sample { temperature } = cfg.mode {
            if !(temperature > 0.0) {
                return Err(Error::Config("temperature must be positive".into()));
            }
        }
        let d = self.config.d_model;
        if let Some(z) = z {
            if z.len() != d {
                return Err(Error::Data(format!("edit vector has width {}, expected {d}", z.len())));
            }
        }
        let max_out = cfg.max_len.min(self.config.max_len - 1);
        let memory = {
            let mut g = Graph::new(&self.store);
            let shift = match (z, self.config.conditioning) {
                (Some(z), Conditioning::Encoder) => Some(g.constant(Tensor::row_vector(z.to_vec()))),
                _ => None,
            };
            let s = self.encode_states(&mut g, x, shift)?;
            g.to_tensor(s)
        };
        let mut cache = self.decoder.start_cache(&self.store, &memory)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::new();
        let mut log_prob = 0.0;
        let mut last = BOS;
        for pos in 0..=max_out {
            let mut g = Graph::new(&self.store);
            let mut h = self.embed_tokens(&mut g, &[last], pos)?;
            if let (Some(z), Conditioning::Decoder) = (z, self.config.conditioning) {
                let zv = g.constant(Tensor::row_vector(z.to_vec()));
                h = g.add(h, zv)?;
            }
            let s = self.decoder.step(&mut g, h, &mut cache)?;
            let logits = self.out.forward(&mut g, s)?;
            let mut logits: Vec<f64> = g.value(logits).iter().map(|v| v.as_f64()).collect();
            // Framing tokens other than EOS never occur inside a target.
            for id in [PAD, BOS, UNK, SEP] {
                if id < logits.len() {
                    logits[id] = f64::NEG_INFINITY;
                }
            }
            let lp = log_softmax(&logits);
            let next = match cfg.mode {
                DecodeMode::Greedy => argmax(&logits),
                DecodeMode::Sample { temperature } => {
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = logits.iter().map(|&l| ((l - m) / temperature).exp()).collect();
                    match WeightedIndex::new(&w) {
                        Ok(dist) => dist.sample(&mut rng),
                        Err(_) => argmax(&logits),
                    }
                }
            };
            log_prob += lp[next];
            if next == EOS {
                return Ok(Generated {
                    ids: out,
                    log_prob,
                    finished: true,
                });
            }
            if pos == max_out {
                break;
            }
            out.push(next);
            last = next;
        }
        Ok(Generated {
            ids: out,
            log_prob,
            finished: false,
        })
    }

    /// Decodes `x` under codebook entry `k`. Never encodes any target program.
    pub fn generate(&self, x: &[usize], k: usize, cfg: &DecodingConfig) -> Result<Generated> {
        if !self.kind().is_vq() {
            return Err(Error::Config(format!("{} has no discrete latents", self.kind())));
        }
        let z = self.codebook_entry(k)?;
        self.decode(x, Some(&z), cfg)
    }

    /// `n` suggestions: per-latent greedy for VQ kinds (`n` is ignored and K
    /// outputs are returned in latent order), prior samples for the
    /// Edit-VAE, temperature samples for seq2seq.
    pub fn suggestions(
        &self,
        x: &[usize],
        n: usize,
        temperature: f64,
        max_len: usize,
        seed: u64,
    ) -> Result<Vec<Generated>> {
        match self.kind() {
            ModelKind::EditVqvae | ModelKind::VqvaeConcat => {
                let k = self.codebook_size().expect("codebook");
                (0..k)
                    .map(|k| self.generate(x, k, &DecodingConfig::greedy(max_len)))
                    .collect()
            }
            ModelKind::EditVae => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| {
                        let z: Vec<T> = (0..self.config.d_model)
                            .map(|_| {
                                let v: f64 = rand_distr::StandardNormal.sample(&mut rng);
                                T::from_f64_lossy(v)
                            })
                            .collect();
                        self.decode(x, Some(&z), &DecodingConfig::greedy(max_len))
                    })
                    .collect()
            }
            ModelKind::Seq2seq | ModelKind::Seq2seqMax => self.sample_seq2seq(x, n, temperature, max_len, seed),
        }
    }

    /// `n` independent temperature samples, in sampling order.
    pub fn sample_seq2seq(
        &self,
        x: &[usize],
        n: usize,
        temperature: f64,
        max_len: usize,
        seed: u64,
    ) -> Result<Vec<Generated>> {
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s = rand::Rng::gen::<u64>(&mut seeder);
                self.decode(x, None, &DecodingConfig::sample(temperature, max_len, s))
            })
            .collect()
    }
}
