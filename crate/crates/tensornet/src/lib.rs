//! Dense `f64` tensors and a small set of neural-network layers with
//! hand-written reverse-mode gradients.
//!
//! Every layer works on a batch given as a slice of sample tensors. Linear
//! layers take rank-1 samples, convolutions take `[C, H, W]` maps (sizes may
//! differ between samples), and batch normalization pools statistics per
//! channel over everything in the batch.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod pool;
pub mod sequential;
pub mod tensor;

use serde::{Deserialize, Serialize};

pub use activation::{relu, sigmoid};
pub use batchnorm::BatchNorm;
pub use conv::{Conv2d, ConvSpec};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_strided, GradCheckReport, Parameterized};
pub use linear::Linear;
pub use loss::{bce, bce_grad};
pub use optim::{Adam, AdamConfig, Optimizer, OptimizerConfig, Sgd};
pub use pool::quadrant_pool;
pub use sequential::{Layer, ParamStore, Sequential, StoredTensor};
pub use tensor::{concat, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}
