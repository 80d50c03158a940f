//! Minimal dense linear algebra, neural primitives with fixed numerical
//! conventions, a deterministic rng, and a finite-difference gradient
//! verifier. Everything downstream builds on this; all values are f64.

pub mod gradcheck;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use gradcheck::grad_check;
pub use ops::{
    cross_entropy, dropout, dropout_mask, layer_norm, linear_forward, softmax_temperature, Mode,
    EPS_LOG, LN_EPS,
};
pub use rng::Rng;
pub use tensor::{outer, Tensor1, Tensor2};
