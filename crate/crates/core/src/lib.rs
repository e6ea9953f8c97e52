//! Core library of the lwtf workbench: a small reverse-mode differentiable
//! tensor engine, data-driven talking-face generator graphs, non-adversarial
//! knowledge-distillation training, post-training quantization with
//! mixed-precision execution, and the evaluation metrics used by the CLI.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std` feature
//! adds multi-threaded kernels. All computation is deterministic for a fixed
//! seed and independent of the configured thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod distill;
pub mod elem;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod quant;
pub mod rng;
pub mod runtime;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use elem::Elem;
pub use error::{Error, Result};
pub use tensor::Tensor;
