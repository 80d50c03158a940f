//! A desk-scale mixture of calibrated experts over TF-IDF text features.
//!
//! Three low-rank task-vector experts — one per alignment dimension
//! (helpful, harmless, honest) — share a frozen input projection. A
//! temperature-softmax router combines expert outputs through fusion
//! weights alpha_i = pi_i · gamma_tilde_i, where gamma_tilde is a convex
//! task-weight vector refreshed from inverse expert losses. Training
//! minimizes task cross-entropy plus entropy, KL-to-previous-step, and
//! gating regularizers; everything is f64, manually differentiated, and
//! bit-deterministic under a fixed seed.

pub mod adapters;
pub mod bank;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod numeric;
pub mod router;
pub mod training;

pub use error::{Error, Result};
