//! Vector quantization against a learned codebook.

use rand::Rng;

use crate::error::{NeuralError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `K x d` matrix of learned code vectors.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub entries: ParamId,
    pub size: usize,
    pub dim: usize,
}

impl Codebook {
    /// Entries start as unit Gaussian samples scaled by `1/sqrt(d)`.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        size: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let entries = store.add_normal(name, size, dim, 1.0 / (dim as f64).sqrt(), rng);
        Self { entries, size, dim }
    }
}

/// Index of the row of `entries` (`k x dim`, row-major) closest to `z` in
/// squared Euclidean distance. Ties resolve to the lowest index.
pub fn nearest_index<T: Scalar>(entries: &[T], dim: usize, z: &[T]) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (k, row) in entries.chunks(dim).enumerate() {
        let dist: f64 = row
            .iter()
            .zip(z)
            .map(|(&c, &x)| {
                let d = c.as_f64() - x.as_f64();
                d * d
            })
            .sum();
        if dist < best_dist {
            best_dist = dist;
            best = k;
        }
    }
    best
}

/// Plain (graph-free) codebook lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct VqLookup<T> {
    pub index: usize,
    pub quantized: Vec<T>,
    /// `|sg(z) - z_q|^2`; equal in value to the commitment loss.
    pub codebook_loss: T,
    /// `|z - sg(z_q)|^2`.
    pub commitment_loss: T,
}

pub fn lookup<T: Scalar>(codebook: &Tensor<T>, z: &[T]) -> Result<VqLookup<T>> {
    let (k, d) = codebook.dims2();
    if z.len() != d || k == 0 {
        return Err(NeuralError::Shape {
            op: "vq_lookup",
            lhs: (k, d),
            rhs: (1, z.len()),
        });
    }
    let index = nearest_index(codebook.data(), d, z);
    let quantized = codebook.row(index).to_vec();
    let dist: T = quantized
        .iter()
        .zip(z)
        .map(|(&c, &x)| (c - x) * (c - x))
        .sum();
    Ok(VqLookup {
        index,
        quantized,
        codebook_loss: dist,
        commitment_loss: dist,
    })
}

/// Quantization inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct Quantized {
    pub index: usize,
    /// `z + sg(z_q - z)`: value of `z_q`, gradient copied straight to `z`.
    pub straight_through: Var,
    pub entry: Var,
    pub codebook_loss: Var,
    pub commitment_loss: Var,
}

/// Quantizes the `1 x d` vector `z` against `codebook` (`K x d`).
pub fn quantize<T: Scalar>(g: &mut Graph<'_, T>, codebook: Var, z: Var) -> Result<Quantized> {
    let (k, d) = g.dims(codebook);
    if g.dims(z) != (1, d) {
        return Err(NeuralError::Shape {
            op: "quantize",
            lhs: (k, d),
            rhs: g.dims(z),
        });
    }
    let idx = nearest_index(g.value(codebook), d, g.value(z));
    let idx = g.freeze(vec![T::from_usize(idx).expect("index")])[0]
        .to_usize()
        .expect("frozen index");
    let entry = g.slice_rows(codebook, idx, 1)?;

    let z_sg = g.stop_grad(z);
    let diff = g.sub(z_sg, entry)?;
    let codebook_loss = g.sum_squares(diff)?;

    let entry_sg = g.stop_grad(entry);
    let diff = g.sub(z, entry_sg)?;
    let commitment_loss = g.sum_squares(diff)?;

    let offset = g.sub(entry, z)?;
    let offset = g.stop_grad(offset);
    let straight_through = g.add(z, offset)?;
    Ok(Quantized {
        index: idx,
        straight_through,
        entry,
        codebook_loss,
        commitment_loss,
    })
}

/// Exponential-moving-average codebook statistics, an alternative to
/// learning the codebook by gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaCodebook {
    pub decay: f64,
    pub counts: Vec<f64>,
    pub sums: Vec<Vec<f64>>,
}

impl EmaCodebook {
    pub fn new<T: Scalar>(entries: &Tensor<T>, decay: f64) -> Self {
        let (k, _) = entries.dims2();
        Self {
            decay,
            counts: vec![1.0; k],
            sums: (0..k)
                .map(|i| entries.row(i).iter().map(|x| x.as_f64()).collect())
                .collect(),
        }
    }

    /// Folds one batch of `(index, z)` assignments into the averages and
    /// writes the updated centroids into `entries`.
    pub fn update<T: Scalar>(&mut self, entries: &mut Tensor<T>, assignments: &[(usize, Vec<T>)]) {
        let k = self.counts.len();
        let d = entries.dims2().1;
        let mut batch_counts = vec![0.0; k];
        let mut batch_sums = vec![vec![0.0; d]; k];
        for (idx, z) in assignments {
            batch_counts[*idx] += 1.0;
            for (s, x) in batch_sums[*idx].iter_mut().zip(z) {
                *s += x.as_f64();
            }
        }
        let decay = self.decay;
        for i in 0..k {
            self.counts[i] = decay * self.counts[i] + (1.0 - decay) * batch_counts[i];
            for j in 0..d {
                self.sums[i][j] = decay * self.sums[i][j] + (1.0 - decay) * batch_sums[i][j];
            }
        }
        // Laplace smoothing keeps unused entries finite.
        let n: f64 = self.counts.iter().sum();
        let eps = 1e-5;
        let data = entries.data_mut();
        for i in 0..k {
            let c = (self.counts[i] + eps) / (n + k as f64 * eps) * n;
            for j in 0..d {
                data[i * d + j] = T::from_f64_lossy(self.sums[i][j] / c);
            }
        }
    }
}
