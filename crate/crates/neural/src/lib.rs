//! Deterministic CPU tensor library: reverse-mode autodiff over row-major
//! matrices, transformer blocks, attention pooling, vector quantization and
//! PCA.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pca;
pub mod scalar;
pub mod tensor;
pub mod vq;

pub use error::{NeuralError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
