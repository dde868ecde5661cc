//! Transformer building blocks expressed over [`Graph`] operations.
//!
//! Blocks are plain structs of [`ParamId`]s; the parameters themselves live in
//! a [`ParamStore`]. All blocks use pre-norm residual connections.

use rand::Rng;

use crate::error::{NeuralError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(NeuralError::Invalid(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NeuralError::Invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), d_in, d_out, d_in, rng);
        let b = store.add_filled(format!("{name}.b"), 1, d_out, 0.0);
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gain: store.add_filled(format!("{name}.gain"), 1, d, 1.0),
            bias: store.add_filled(format!("{name}.bias"), 1, d, 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Scaled dot-product attention over already-projected `q`, `k`, `v`,
/// split into `heads` column groups.
pub fn attend<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let d = g.dims(q).1;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let probs = g.softmax(scores, causal)?;
        outs.push(g.matmul(probs, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: Var,
        memory: Var,
        causal: bool,
    ) -> Result<Var> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let o = attend(g, q, k, v, self.heads, causal)?;
        self.o.forward(g, o)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, d_ff, rng),
            down: Linear::new(store, &format!("{name}.down"), d_ff, d, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, h)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub ln_out: LayerNorm,
    pub dropout: f64,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerConfig,
        rng: &mut R,
    ) -> Self {
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                EncoderLayer {
                    ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), cfg.d_model),
                    attn: MultiHeadAttention::new(
                        store,
                        &format!("{p}.attn"),
                        cfg.d_model,
                        cfg.heads,
                        rng,
                    ),
                    ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), cfg.d_model),
                    ff: FeedForward::new(store, &format!("{p}.ff"), cfg.d_model, cfg.d_ff, rng),
                }
            })
            .collect();
        Self {
            layers,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), cfg.d_model),
            dropout: cfg.dropout,
        }
    }

    /// Bidirectional self-attention stack; returns normalized states.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut x = x;
        for layer in &self.layers {
            let h = layer.ln_attn.forward(g, x)?;
            let a = layer.attn.forward(g, h, h, false)?;
            let a = g.dropout(a, self.dropout)?;
            x = g.add(x, a)?;
            let h = layer.ln_ff.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            let f = g.dropout(f, self.dropout)?;
            x = g.add(x, f)?;
        }
        self.ln_out.forward(g, x)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub ln_out: LayerNorm,
    pub dropout: f64,
}

/// Per-layer key/value cache for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    self_k: Vec<Vec<T>>,
    self_v: Vec<Vec<T>>,
    cross_k: Vec<Tensor<T>>,
    cross_v: Vec<Tensor<T>>,
    len: usize,
}

impl<T> DecoderCache<T> {
    /// Number of positions already decoded.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TransformerConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d_model;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                DecoderLayer {
                    ln_self: LayerNorm::new(store, &format!("{p}.ln_self"), d),
                    self_attn: MultiHeadAttention::new(
                        store,
                        &format!("{p}.self_attn"),
                        d,
                        cfg.heads,
                        rng,
                    ),
                    ln_cross: LayerNorm::new(store, &format!("{p}.ln_cross"), d),
                    cross_attn: MultiHeadAttention::new(
                        store,
                        &format!("{p}.cross_attn"),
                        d,
                        cfg.heads,
                        rng,
                    ),
                    ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), d),
                    ff: FeedForward::new(store, &format!("{p}.ff"), d, cfg.d_ff, rng),
                }
            })
            .collect();
        Self {
            layers,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), d),
            dropout: cfg.dropout,
        }
    }

    /// Causal decoder over a full target prefix with cross-attention to
    /// `memory`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, memory: Var) -> Result<Var> {
        let mut x = x;
        for layer in &self.layers {
            let h = layer.ln_self.forward(g, x)?;
            let a = layer.self_attn.forward(g, h, h, true)?;
            let a = g.dropout(a, self.dropout)?;
            x = g.add(x, a)?;
            let h = layer.ln_cross.forward(g, x)?;
            let c = layer.cross_attn.forward(g, h, memory, false)?;
            let c = g.dropout(c, self.dropout)?;
            x = g.add(x, c)?;
            let h = layer.ln_ff.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            let f = g.dropout(f, self.dropout)?;
            x = g.add(x, f)?;
        }
        self.ln_out.forward(g, x)
    }

    /// Precomputes cross-attention keys and values for `memory`.
    pub fn start_cache<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        memory: &Tensor<T>,
    ) -> Result<DecoderCache<T>> {
        let mut g = Graph::new(params);
        let m = g.constant(memory.clone());
        let mut cross_k = Vec::with_capacity(self.layers.len());
        let mut cross_v = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let k = layer.cross_attn.k.forward(&mut g, m)?;
            let v = layer.cross_attn.v.forward(&mut g, m)?;
            cross_k.push(g.to_tensor(k));
            cross_v.push(g.to_tensor(v));
        }
        Ok(DecoderCache {
            self_k: vec![Vec::new(); self.layers.len()],
            self_v: vec![Vec::new(); self.layers.len()],
            cross_k,
            cross_v,
            len: 0,
        })
    }

    /// Decodes one new position (`x` is `1 x d`) and extends the cache.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        cache: &mut DecoderCache<T>,
    ) -> Result<Var> {
        let d = g.dims(x).1;
        let t = cache.len + 1;
        let mut x = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.ln_self.forward(g, x)?;
            let q = layer.self_attn.q.forward(g, h)?;
            let k = layer.self_attn.k.forward(g, h)?;
            let v = layer.self_attn.v.forward(g, h)?;
            cache.self_k[l].extend_from_slice(g.value(k));
            cache.self_v[l].extend_from_slice(g.value(v));
            let ks = g.constant(Tensor::matrix(t, d, cache.self_k[l].clone())?);
            let vs = g.constant(Tensor::matrix(t, d, cache.self_v[l].clone())?);
            let a = attend(g, q, ks, vs, layer.self_attn.heads, false)?;
            let a = layer.self_attn.o.forward(g, a)?;
            x = g.add(x, a)?;

            let h = layer.ln_cross.forward(g, x)?;
            let q = layer.cross_attn.q.forward(g, h)?;
            let kc = g.constant(cache.cross_k[l].clone());
            let vc = g.constant(cache.cross_v[l].clone());
            let c = attend(g, q, kc, vc, layer.cross_attn.heads, false)?;
            let c = layer.cross_attn.o.forward(g, c)?;
            x = g.add(x, c)?;

            let h = layer.ln_ff.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            x = g.add(x, f)?;
        }
        cache.len = t;
        self.ln_out.forward(g, x)
    }
}

/// Attention pooling: a learned `1 x d` query attends over a sequence of
/// states and returns a single `1 x d` summary.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub query: ParamId,
    pub attn: MultiHeadAttention,
}

impl AttentionPool {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query: store.add_normal(format!("{name}.query"), 1, d, 1.0, rng),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, states: Var) -> Result<Var> {
        let q = g.param(self.query);
        self.attn.forward(g, q, states, false)
    }
}

/// Sinusoidal positional encodings, `max_len x d`.
pub fn sinusoidal_table<T: Scalar>(max_len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * d + i] = T::from_f64_lossy(v);
        }
    }
    Tensor::matrix(max_len, d, data).expect("table shape")
}
