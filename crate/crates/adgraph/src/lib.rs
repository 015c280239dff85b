//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every op appends one node to a [`Tape`]; [`Tape::backward`] sweeps the
//! tape once from a scalar root. Shapes are checked eagerly and every
//! produced value must be finite, so a NaN surfaces at the op that made it.
//!
//! ```
//! use adgraph::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.leaf(Tensor::scalar(2.0));
//! let p = tape.mul(x, y).unwrap();
//! let grads = tape.backward(p).unwrap();
//! assert_eq!(grads.wrt(x).item(), 2.0);
//! assert_eq!(grads.wrt(y).item(), 3.0);
//! ```

pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use optim::{sgd_step, Adam, AdamConfig};
pub use tape::{disk_overlap_fraction, Gradients, Tape, Var, HAZARD_LOGIT_CAP};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, AdError>;
