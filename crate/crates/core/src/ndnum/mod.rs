//! Dense f64 tensors and a small reverse-mode autodiff tape.

mod tape;
mod tensor;

pub use tape::{gelu, Tape, Var};
pub use tensor::Tensor;
