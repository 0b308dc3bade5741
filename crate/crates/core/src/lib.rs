//! Sparse inference toolkit: bitmask and N:M weight sparsity, memory-bound
//! matvec kernels, magnitude pruning, distillation losses, a toy model with
//! manual backprop, and INT8 weight quantization.

pub mod bench;
pub mod config;
pub mod distill;
pub mod error;
pub mod kernels;
pub mod model;
pub mod par;
pub mod pruning;
pub mod quant;
pub mod report;
pub mod rng;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use sparse::{compress, decompress, BitmaskCompressed, NmPattern, ValueWidth};
pub use tensor::{DenseMatrix, Vector};
