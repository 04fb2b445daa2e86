//! Command-line front end: denoising, out-of-sample prediction, simulation
//! and benchmarking.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
