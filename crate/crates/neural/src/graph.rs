//! Eager tape-based reverse-mode automatic differentiation over matrices.
//!
//! Every value in a [`Graph`] is a row-major `rows x cols` matrix. Operations
//! compute their result immediately and record the op on the tape; calling
//! [`Graph::backward`] on a `1x1` loss walks the tape in reverse.
//!
//! Non-differentiable choices made during a forward pass (stop-gradient
//! values, quantizer indices, dropout masks, reparameterization noise) go
//! through [`Graph::freeze`]. A recorded freeze log can be replayed into a
//! fresh graph, which turns the forward pass into the smooth surrogate whose
//! exact derivative is what `backward` returns. Finite-difference checks rely
//! on this.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NeuralError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, b_t: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        a: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { a: Var, mask: Vec<T> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Transpose(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    StopGrad,
}

#[derive(Debug)]
struct Node<'p, T: Clone> {
    rows: usize,
    cols: usize,
    value: Cow<'p, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// A forward computation recorded for differentiation.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
    param_vars: Vec<Option<Var>>,
    train: bool,
    rng: ChaCha8Rng,
    frozen: Vec<Vec<T>>,
    replay: Option<(Vec<Vec<T>>, usize)>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Inference-mode graph: dropout disabled.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self::with_mode(params, false, 0)
    }

    /// Training-mode graph whose random draws are seeded by `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        Self::with_mode(params, true, seed)
    }

    pub fn with_mode(params: &'p ParamStore<T>, train: bool, seed: u64) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            frozen: Vec::new(),
            replay: None,
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Replays a freeze log recorded by an earlier forward pass.
    pub fn set_replay(&mut self, log: Vec<Vec<T>>) {
        self.replay = Some((log, 0));
    }

    /// Values passed through [`Graph::freeze`] so far.
    pub fn frozen_log(&self) -> &[Vec<T>] {
        &self.frozen
    }

    /// Records a non-differentiable value, or substitutes the recorded one
    /// when replaying.
    pub fn freeze(&mut self, value: Vec<T>) -> Vec<T> {
        let value = match &mut self.replay {
            Some((log, cursor)) => {
                let v = log
                    .get(*cursor)
                    .cloned()
                    .expect("replay log shorter than forward pass");
                *cursor += 1;
                v
            }
            None => value,
        };
        self.frozen.push(value.clone());
        value
    }

    /// Standard normal draws, frozen for replay.
    pub fn normal_noise(&mut self, rows: usize, cols: usize) -> Var {
        let noise: Vec<T> = (0..rows * cols)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut self.rng);
                T::from_f64_lossy(x)
            })
            .collect();
        let noise = self.freeze(noise);
        self.leaf(rows, cols, Cow::Owned(noise), false)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("node shape")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, rows: usize, cols: usize, value: Cow<'p, [T]>, grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op: Op::Leaf,
            requires_grad: grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let t = self.params.get(id);
        let (r, c) = t.dims2();
        let v = self.leaf(r, c, Cow::Borrowed(t.data()), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let (r, c) = t.dims2();
        self.leaf(r, c, Cow::Owned(t.into_data()), false)
    }

    pub fn constant_slice(&mut self, rows: usize, cols: usize, data: &'p [T]) -> Var {
        self.leaf(rows, cols, Cow::Borrowed(data), false)
    }

    /// A differentiable leaf that is not a stored parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let (r, c) = t.dims2();
        self.leaf(r, c, Cow::Owned(t.into_data()), true)
    }

    fn push(
        &mut self,
        name: &'static str,
        rows: usize,
        cols: usize,
        value: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        debug_assert_eq!(rows * cols, value.len(), "{name}");
        if value.iter().any(|x| !x.is_finite()) {
            return Err(NeuralError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            rows,
            cols,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(NeuralError::Shape {
                op,
                lhs: da,
                rhs: db,
            });
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (bk, n) = if b_t { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(NeuralError::Shape {
                op: "matmul",
                lhs: (m, k),
                rhs: (br, bc),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), b_t, &mut out, false);
        self.push("matmul", m, n, out, Op::MatMul { a, b, b_t }, &[a, b])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Vec<T>> {
        self.same_shape(name, a, b)?;
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let (r, c) = self.dims(a);
        self.push("add", r, c, out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let (r, c) = self.dims(a);
        self.push("sub", r, c, out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let (r, c) = self.dims(a);
        self.push("mul", r, c, out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(NeuralError::Shape {
                op: "add_row",
                lhs: (r, c),
                rhs: self.dims(row),
            });
        }
        let rv = self.value(row);
        let out: Vec<T> = self
            .value(a)
            .chunks(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| x + y))
            .collect();
        self.push("add_row", r, c, out, Op::AddRow(a, row), &[a, row])
    }

    /// Repeats a `1 x cols` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (ar, c) = self.dims(a);
        if ar != 1 {
            return Err(NeuralError::Shape {
                op: "broadcast_rows",
                lhs: (ar, c),
                rhs: (1, c),
            });
        }
        let out = self.value(a).repeat(rows);
        self.push("broadcast_rows", rows, c, out, Op::BroadcastRows(a), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let st = T::from_f64_lossy(s);
        let out = self.value(a).iter().map(|&x| x * st).collect();
        let (r, c) = self.dims(a);
        self.push("scale", r, c, out, Op::Scale(a, s), &[a])
    }

    /// Row-wise softmax. With `causal`, row `i` only sees columns
    /// `j <= i + (cols - rows)`.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var> {
        let (r, c) = self.dims(a);
        if causal && c < r {
            return Err(NeuralError::Shape {
                op: "softmax",
                lhs: (r, c),
                rhs: (r, r),
            });
        }
        let offset = c.saturating_sub(r);
        let x = self.value(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let visible = if causal { i + offset + 1 } else { c };
            let row = &x[i * c..i * c + visible];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let o = &mut out[i * c..i * c + visible];
            let mut total = T::zero();
            for (oj, &xj) in o.iter_mut().zip(row) {
                *oj = (xj - max).exp();
                total += *oj;
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        self.push("softmax", r, c, out, Op::Softmax(a), &[a])
    }

    /// Row-wise layer normalization with `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        for p in [gain, bias] {
            if self.dims(p) != (1, c) {
                return Err(NeuralError::Shape {
                    op: "layer_norm",
                    lhs: (r, c),
                    rhs: self.dims(p),
                });
            }
        }
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let n = T::from_usize(c).expect("cols");
        let x = self.value(a);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        self.push(
            "layer_norm",
            r,
            c,
            out,
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[a, gain, bias],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.dims(a);
        self.push("gelu", r, c, out, Op::Gelu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x.exp()).collect();
        let (r, c) = self.dims(a);
        self.push("exp", r, c, out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x.ln()).collect();
        let (r, c) = self.dims(a);
        self.push("log", r, c, out, Op::Log(a), &[a])
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let f = T::from_f64_lossy(floor);
        let out = self.value(a).iter().map(|&x| x.max(f)).collect();
        let (r, c) = self.dims(a);
        self.push("clamp_min", r, c, out, Op::ClampMin(a, floor), &[a])
    }

    /// Gathers rows of `table` by index.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(NeuralError::Invalid(format!(
                "embedding id {bad} out of range for table of {vocab}"
            )));
        }
        let tv = self.value(table);
        let out: Vec<T> = ids
            .iter()
            .flat_map(|&i| tv[i * d..(i + 1) * d].iter().copied())
            .collect();
        self.push(
            "embedding",
            ids.len(),
            d,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.value(a).len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = self.freeze(mask);
        let out = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let (r, c) = self.dims(a);
        self.push("dropout", r, c, out, Op::Dropout { a, mask }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|&v| self.dims(v).0).unwrap_or(0);
        for &p in parts {
            if self.dims(p).0 != r {
                return Err(NeuralError::Shape {
                    op: "concat_cols",
                    lhs: self.dims(parts[0]),
                    rhs: self.dims(p),
                });
            }
        }
        let c: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        self.push("concat_cols", r, c, out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|&v| self.dims(v).1).unwrap_or(0);
        for &p in parts {
            if self.dims(p).1 != c {
                return Err(NeuralError::Shape {
                    op: "concat_rows",
                    lhs: self.dims(parts[0]),
                    rhs: self.dims(p),
                });
            }
        }
        let r: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(r * c);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push("concat_rows", r, c, out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(NeuralError::Shape {
                op: "slice_cols",
                lhs: (r, c),
                rhs: (r, start + len),
            });
        }
        let x = self.value(a);
        let out: Vec<T> = (0..r)
            .flat_map(|i| x[i * c + start..i * c + start + len].iter().copied())
            .collect();
        self.push("slice_cols", r, len, out, Op::SliceCols { a, start }, &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(NeuralError::Shape {
                op: "slice_rows",
                lhs: (r, c),
                rhs: (start + len, c),
            });
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", len, c, out, Op::SliceRows { a, start }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let x = self.value(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        self.push("transpose", c, r, out, Op::Transpose(a), &[a])
    }

    /// Mean token cross-entropy of row-wise logits against target ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, v) = self.dims(logits);
        if targets.len() != r {
            return Err(NeuralError::Shape {
                op: "cross_entropy",
                lhs: (r, v),
                rhs: (targets.len(), v),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(NeuralError::Invalid(format!(
                "target {bad} out of range for {v} classes"
            )));
        }
        let x = self.value(logits);
        let mut probs = vec![T::zero(); r * v];
        let mut total = T::zero();
        for i in 0..r {
            let row = &x[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &l) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (l - max).exp();
                z += *p;
            }
            probs[i * v..(i + 1) * v].iter_mut().for_each(|p| *p /= z);
            total += max + z.ln() - row[targets[i]];
        }
        let loss = total / T::from_usize(r.max(1)).expect("rows");
        self.push(
            "cross_entropy",
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push("sum", 1, 1, vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1);
        let s = self.value(a).iter().copied().sum::<T>() / T::from_usize(n).expect("len");
        self.push("mean", 1, 1, vec![s], Op::Mean(a), &[a])
    }

    /// Sum of squared entries.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        self.sum(sq)
    }

    /// Value copy that blocks gradients; frozen for replay.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let v = self.value(a).to_vec();
        let v = self.freeze(v);
        self.nodes.push(Node {
            rows: r,
            cols: c,
            value: Cow::Owned(v),
            op: Op::StopGrad,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of the `1x1` node `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let (r, c) = self.dims(loss);
        if r * c != 1 {
            return Err(NeuralError::NonScalarLoss(r, c));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(NeuralError::NotRecorded);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients {
            nodes: grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.rows * node.cols]);
        f(buf);
    }

    fn backprop_node(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            &Op::MatMul { a, b, b_t } => {
                let (m, k) = self.dims(a);
                let n = cols;
                let av = self.value(a);
                let bv = self.value(b);
                self.acc(grads, a, |da| {
                    // dA = G * op(B)^T
                    gemm(m, n, k, g, false, bv, !b_t, da, true);
                });
                self.acc(grads, b, |db| {
                    if b_t {
                        // B is n x k: dB = G^T * A
                        gemm(n, m, k, g, true, av, false, db, true);
                    } else {
                        // B is k x n: dB = A^T * G
                        gemm(k, m, n, av, true, g, false, db, true);
                    }
                });
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, |d| add_into(d, g));
                self.acc(grads, b, |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, |d| add_into(d, g));
                self.acc(grads, b, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                self.acc(grads, a, |d| {
                    for ((x, &gy), &w) in d.iter_mut().zip(g).zip(bv) {
                        *x += gy * w;
                    }
                });
                self.acc(grads, b, |d| {
                    for ((x, &gy), &w) in d.iter_mut().zip(g).zip(av) {
                        *x += gy * w;
                    }
                });
            }
            &Op::AddRow(a, row) => {
                self.acc(grads, a, |d| add_into(d, g));
                self.acc(grads, row, |d| {
                    for chunk in g.chunks(cols.max(1)) {
                        add_into(d, chunk);
                    }
                });
            }
            &Op::BroadcastRows(a) => {
                self.acc(grads, a, |d| {
                    for chunk in g.chunks(cols.max(1)) {
                        add_into(d, chunk);
                    }
                });
            }
            &Op::Scale(a, s) => {
                let s = T::from_f64_lossy(s);
                self.acc(grads, a, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x += s * y));
            }
            &Op::Softmax(a) => {
                let p = &node.value;
                self.acc(grads, a, |d| {
                    for i in 0..rows {
                        let pr = &p[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: T = pr.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                        for j in 0..cols {
                            d[i * cols + j] += pr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain);
                let n = T::from_usize(cols).expect("cols");
                self.acc(grads, *a, |d| {
                    let mut dxhat = vec![T::zero(); cols];
                    for i in 0..rows {
                        let gr = &g[i * cols..(i + 1) * cols];
                        let xr = &xhat[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / n;
                        let mean_dx =
                            dxhat.iter().zip(xr).map(|(&u, &v)| u * v).sum::<T>() / n;
                        for j in 0..cols {
                            d[i * cols + j] += rstd[i] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                });
                self.acc(grads, *gain, |d| {
                    for i in 0..rows {
                        for j in 0..cols {
                            d[j] += g[i * cols + j] * xhat[i * cols + j];
                        }
                    }
                });
                self.acc(grads, *bias, |d| {
                    for chunk in g.chunks(cols.max(1)) {
                        add_into(d, chunk);
                    }
                });
            }
            &Op::Gelu(a) => {
                let x = self.value(a);
                self.acc(grads, a, |d| {
                    for ((dv, &gy), &xv) in d.iter_mut().zip(g).zip(x) {
                        *dv += gy * gelu_grad(xv);
                    }
                });
            }
            &Op::Exp(a) => {
                let y = &node.value;
                self.acc(grads, a, |d| {
                    for ((dv, &gy), &yv) in d.iter_mut().zip(g).zip(y.iter()) {
                        *dv += gy * yv;
                    }
                });
            }
            &Op::Log(a) => {
                let x = self.value(a);
                self.acc(grads, a, |d| {
                    for ((dv, &gy), &xv) in d.iter_mut().zip(g).zip(x) {
                        *dv += gy / xv;
                    }
                });
            }
            &Op::ClampMin(a, floor) => {
                let x = self.value(a);
                let f = T::from_f64_lossy(floor);
                self.acc(grads, a, |d| {
                    for ((dv, &gy), &xv) in d.iter_mut().zip(g).zip(x) {
                        if xv > f {
                            *dv += gy;
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d_model = cols;
                self.acc(grads, *table, |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(
                            &mut d[id * d_model..(id + 1) * d_model],
                            &g[r * d_model..(r + 1) * d_model],
                        );
                    }
                });
            }
            Op::Dropout { a, mask } => {
                self.acc(grads, *a, |d| {
                    for ((dv, &gy), &m) in d.iter_mut().zip(g).zip(mask) {
                        *dv += gy * m;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    self.acc(grads, p, |d| {
                        for i in 0..rows {
                            add_into(
                                &mut d[i * pc..(i + 1) * pc],
                                &g[i * cols + offset..i * cols + offset + pc],
                            );
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(grads, p, |d| add_into(d, &g[offset..offset + n]));
                    offset += n;
                }
            }
            &Op::SliceCols { a, start } => {
                let ac = self.dims(a).1;
                self.acc(grads, a, |d| {
                    for i in 0..rows {
                        add_into(
                            &mut d[i * ac + start..i * ac + start + cols],
                            &g[i * cols..(i + 1) * cols],
                        );
                    }
                });
            }
            &Op::SliceRows { a, start } => {
                self.acc(grads, a, |d| {
                    add_into(&mut d[start * cols..(start + rows) * cols], g);
                });
            }
            &Op::Transpose(a) => {
                // node is cols_a x rows_a
                self.acc(grads, a, |d| {
                    for i in 0..rows {
                        for j in 0..cols {
                            d[j * rows + i] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (r, v) = self.dims(*logits);
                let scale = g[0] / T::from_usize(r.max(1)).expect("rows");
                self.acc(grads, *logits, |d| {
                    for i in 0..r {
                        for j in 0..v {
                            let onehot = if targets[i] == j { T::one() } else { T::zero() };
                            d[i * v + j] += scale * (probs[i * v + j] - onehot);
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                self.acc(grads, a, |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            &Op::Mean(a) => {
                let n = T::from_usize(self.value(a).len().max(1)).expect("len");
                self.acc(grads, a, |d| d.iter_mut().for_each(|x| *x += g[0] / n));
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf created with [`Graph::input`] or [`Graph::param`].
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_vars[id.0].and_then(|v| self.wrt(v))
    }

    /// Adds `scale * grad` into a per-parameter buffer (see
    /// [`ParamStore::zero_grads`]).
    pub fn accumulate_into(&self, buf: &mut [Vec<T>], scale: T) {
        for (i, slot) in self.param_vars.iter().enumerate() {
            if let Some(g) = slot.and_then(|v| self.wrt(v)) {
                for (b, &x) in buf[i].iter_mut().zip(g) {
                    *b += scale * x;
                }
            }
        }
    }
}
