//! Delay-Doppler (OTFS) physical-layer simulation library.
//!
//! The crate models an OTFS link whose transmitter and receiver suffer IQ
//! imbalance, and provides two receiver families for it: classical ML/MMSE
//! detection with impulse-based channel estimation, and a set of small dense
//! neural networks that learn IQ compensation and joint channel training +
//! detection. An OFDM arm over the same physical channel and a Monte Carlo
//! BER engine round out the benchmark surface.

pub mod bench;
pub mod detectors;
pub mod error;
pub mod iqi;
pub mod neural;
pub mod ofdm;
pub mod otfs;
pub mod pipeline;

pub use error::{Error, Result};
