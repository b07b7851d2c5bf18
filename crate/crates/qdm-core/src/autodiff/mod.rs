//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Scope is deliberately narrow: exactly the operations an LSTM metric
//! learner needs (matmul, elementwise arithmetic, gate nonlinearities,
//! norms, hinge, fused softmax cross-entropy, reductions). No
//! broadcasting beyond matrix-vector, no higher-order derivatives.

mod check;
mod tape;
mod tensor;

pub use check::{finite_difference, grads_close, max_grad_error};
pub use tape::{stable_sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
