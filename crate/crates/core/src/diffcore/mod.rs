//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Calling
//! [`Tape::gradient`] walks the records once in reverse and returns exact
//! gradients of a scalar output. Tapes are built per evaluation and dropped
//! afterwards.
//!
//! ```
//! use localframe::diffcore::{Array, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Array::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let g = tape.gradient(y, &[x]).unwrap();
//! assert_eq!(g[0].item(), 6.0);
//! ```

mod array;
mod tape;

#[cfg(test)]
mod tests;

pub use array::Array;
pub use tape::{Tape, Unary, Var};


#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("gradient needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}")]
    InvalidArgument(String),
}
