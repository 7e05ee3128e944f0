//! Synthetic data generation and transaction file I/O.

pub mod io;
pub mod synth;

pub use io::{load_transactions, load_transactions_with_width, save_transactions};
pub use synth::{synth_dataset, synth_with_bursts, SynthConfig};
