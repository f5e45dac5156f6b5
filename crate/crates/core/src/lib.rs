//! Differentiable OFDM baseband simulator and deep joint source–channel
//! coding (JSCC) training harness.
//!
//! The pipeline is CNN encoder → OFDM transmitter with clipping → multipath
//! Rayleigh channel → OFDM receiver with pilot-based MMSE estimation and
//! equalization → CNN decoder. Every block is a graph operation with an
//! exact vector-Jacobian product so the whole chain trains end to end.

pub mod autodiff;
pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod ofdm;
pub mod receiver;
pub mod rng;

pub use error::{Error, Result};
