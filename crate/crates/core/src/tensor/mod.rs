//! Dense f64 tensors and a tape-based reverse-mode autodiff graph.
//!
//! The engine covers exactly the operations the forecasting network needs:
//! 1-D convolution (cross-correlation, stride 1, zero padding), 1-D transposed
//! convolution (stride 1, no padding), batch normalization over `[N, C, L]`,
//! ReLU, channel concatenation and mean-squared-error loss, plus an Adam
//! optimizer and a finite-difference gradient checker.
//!
//! A [`Graph`] is built fresh for every forward pass and dropped after
//! `backward`; parameters live outside the graph as [`Parameter`]s and are
//! bound as leaves per pass. All math is f64 and bit-deterministic: every
//! reduction runs in a fixed order regardless of input data.

mod adam;
mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{gradcheck, gradcheck_random, GradCheckOpts, GradCheckReport};
pub use graph::{BnNodes, Graph, NodeId};

use thiserror::Error;

/// Errors from tensor construction, graph ops and the optimizer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values, got {got}")]
    DataLen {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank-{expected} input, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("parameter '{0}' has no gradient; run backward before stepping")]
    MissingGrad(String),
    #[error("gradcheck: {0}")]
    GradCheck(String),
}

/// Dense row-major f64 tensor.
///
/// Values are immutable while a tensor participates in a graph; `grad` is the
/// only field mutated afterwards (by gradient accumulation or `zero_grad`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Accumulated d(loss)/d(self), same length as `data`, once populated.
    pub grad: Option<Vec<f64>>,
    /// Whether backward passes should produce a gradient for this tensor.
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLen {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Builder-style `requires_grad` toggle.
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to values. Reserved for optimizer updates and test
    /// setup; never call while the tensor is bound into a live graph.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (d, s) in grad.iter_mut().zip(g) {
            *d += *s;
        }
    }
}

/// A named trainable tensor with its Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, mut tensor: Tensor) -> Self {
        tensor.requires_grad = true;
        let n = tensor.numel();
        Self {
            name: name.into(),
            tensor,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }
}

/// Batch-normalization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize by batch statistics and update the running averages.
    Train,
    /// Normalize by the stored running statistics; no state mutation.
    Eval,
}

/// Per-layer batch-normalization state: learnable affine parameters plus
/// running statistics updated as `new = (1 - momentum) * old + momentum * batch`.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: BnMode,
}

impl BatchNormState {
    /// Fresh state for `channels` channels: gamma 1, beta 0, running mean 0,
    /// running variance 1, eps 1e-5, momentum 0.1.
    pub fn new(name_prefix: &str, channels: usize) -> Self {
        Self {
            gamma: Parameter::new(
                format!("{name_prefix}.gamma"),
                Tensor::filled([channels], 1.0),
            ),
            beta: Parameter::new(
                format!("{name_prefix}.beta"),
                Tensor::filled([channels], 0.0),
            ),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            mode: BnMode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}
