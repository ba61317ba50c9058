//! A desk-scale laboratory for studying how learning strategies emerge,
//! compete, and cooperate in tiny attention-only transformers: synthetic
//! few-shot episode generators, a 1-2 layer model trained from scratch with
//! a full forward trace and hook system, behavioral evaluators, a mechanistic
//! probe toolkit, and a tensor-product toy model of the training dynamics.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod expconfig;
pub mod fdcheck;
pub mod hooks;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probes;
pub mod rngutil;
pub mod tape;
pub mod tensor;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
