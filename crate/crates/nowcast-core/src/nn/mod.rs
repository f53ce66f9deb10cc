//! Network building blocks above raw tensor ops: parameter bookkeeping,
//! initialization, batch normalization, the deterministic RNG, and the NCP1
//! checkpoint container.

mod batchnorm;
mod checkpoint;
mod init;
mod rng;

pub use batchnorm::{batchnorm, batchnorm_grad, BatchNormState, BnCache, BnMode};
pub use checkpoint::{Checkpoint, Entry};
pub use init::xavier_init;
pub use rng::RngState;

use crate::tensor::Tensor;

/// A learnable tensor paired with its gradient accumulator and a stable name.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Accumulates `g` into the stored gradient; shapes must match.
    pub fn accumulate(&mut self, g: &Tensor) -> crate::error::Result<()> {
        self.grad.add_scaled(g, 1.0)
    }
}
