//! Backward filtering forward guiding on directed graphs of Markov kernels.
//!
//! The backward pass turns leaf observations into closed-form h-functions
//! and per-edge messages; the forward pass samples the guided process from
//! the root and tracks log importance weights. Inference routines
//! (importance sampling, pCN, pseudo-marginal and parameter MH) sit on top.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctime;
pub mod discrete;
pub mod error;
pub mod gamma;
pub mod gaussian;
pub mod graph;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod oracles;
pub mod seed;
pub mod sir;
pub mod space;

pub use error::{Error, Result};
