//! Distributed Kalman filtering over sensor networks with Gaussian-mixture
//! observation models.

pub mod cli;
pub mod consensus;
pub mod error;
pub mod filters;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod wsn;

pub use error::{Error, Result};
