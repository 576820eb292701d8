//! Echo state network toolkit for modeling communication channels.
//!
//! A reservoir of fixed random recurrent units is driven by the transmitted
//! I/Q waveform and a linear readout is trained to reproduce what the
//! receiver sees.

pub mod channelsim;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod readout;
pub mod reservoir;
pub mod rng;
pub mod store;
pub mod transfer;

pub use error::{Error, ErrorCategory, Result};
