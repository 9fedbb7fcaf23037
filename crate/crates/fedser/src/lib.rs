//! Std side of the fedser simulator: file formats, dataset loading,
//! experiment configuration, a thread-pool executor and the experiment
//! driver behind the `fedser` binary.

pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod formats;
pub mod manifest;

pub use error::{Error, Result};
pub use fedser_core as core;
