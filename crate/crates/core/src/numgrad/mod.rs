//! Dense tensors with a reverse-mode tape and a finite-difference oracle.
//!
//! The tape is matrix-granular: each op records whole rank-1/rank-2 values,
//! so a full sequence forward is a few dozen nodes per layer. Ops that need a
//! fused kernel (the selective scan) plug in through [`CustomBackward`].

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{fd_gradient_check, GradCheckReport};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{gelu, log_sum_exp, rms_normalize, sigmoid, silu, softplus};

#[derive(Debug, thiserror::Error)]
pub enum NumgradError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("expected rank {expected}, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
    #[error("shape {shape:?} does not match buffer length {len}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}
