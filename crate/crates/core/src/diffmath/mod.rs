//! Dense arrays, differentiable primitives, and gradient checking.

mod array;
mod gradcheck;
mod tape;

pub use array::{Array2, conv1d_same, softmax_rows};
pub use gradcheck::{GradCheck, grad_check, relative_error};
pub use tape::{DiffNode, Gradients, OpTag, Tape, Var};

use crate::error::Result;

/// Value-level matrix product.
pub fn matmul(a: &Array2, b: &Array2) -> Result<Array2> {
    a.matmul(b)
}
