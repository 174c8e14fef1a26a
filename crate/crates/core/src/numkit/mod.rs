//! Minimal dense numeric kernel.
//!
//! Row-major f64 matrices, the differentiable operations the model graph
//! needs (softmax, SiLU/GELU, layernorm) with hand-written vector-Jacobian
//! products, and a finite-difference oracle for auditing them. All kernels
//! use a fixed reduction order, so results are bitwise deterministic for
//! fixed inputs.

mod grad;
mod matrix;
mod ops;

pub use grad::grad_check;
pub use matrix::{matmul, vec_mat, Matrix, Param};
pub use ops::{
    gelu, gelu_prime, layernorm, layernorm_cached, layernorm_vjp, logsumexp, sigmoid, silu,
    silu_prime, softmax, softmax_vjp, Activation, LayerNormCache,
};
