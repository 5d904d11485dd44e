// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod bench;
pub mod conditioning;
pub mod config;
pub mod context;
pub mod dit;
pub mod error;
pub mod golden;
pub mod kv_cache;
pub mod pipeline;
pub mod rng;
pub mod rope;
pub mod service;
pub mod synth;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
