//! Dense tensors and a minimal reverse-mode differentiation tape.

mod array;
pub(crate) mod kernels;
mod tape;

pub use array::{
    add, concat, matmul, matricize, mul, sigmoid, softmax, softmax_last, tanh, tensor_dot,
    vectorize, NdArray,
};
pub use tape::{Tape, Var};
