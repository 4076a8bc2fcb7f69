//! Simulation of a two-mode parametric haloscope and its synthetic-axion search.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod chain;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod export;
pub mod faxion;
pub mod pipeline;
pub mod qnet;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
