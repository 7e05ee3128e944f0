//! Coordinated-spoofing detection on transaction graphs.
//!
//! The pipeline encodes each transaction's account history with an ODE-RNN,
//! pseudo-labels the transaction graph with a Beta-wavelet spectral scorer,
//! and classifies nodes with two-level heterogeneous graph attention.

pub mod attention;
pub mod cli;
pub mod autodiff;
pub mod data;
pub mod encoder;
mod error;
pub mod graph;
pub mod metrics;
pub mod trainer;
pub mod wavelet;

pub use error::{GdgmError, Result};
