//! Dense tensors and a tape-based reverse-mode differentiator, limited to the
//! operations the encoder, the task heads and the loss need.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, Probe, FD_STEP};
pub use ops::{Op, OpKind, MASK_NEG};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
