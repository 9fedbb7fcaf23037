//! Core of a semi-supervised federated learning simulator for speech emotion
//! recognition.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without `std` (an allocator is required):
//!
//! - [`features`]: log-Mel extraction, fixed-size segmentation and
//!   segment-averaged utterance prediction.
//! - [`model`]: the dual-convolution classifier with spectro-temporal-channel
//!   attention, hand-written backward pass and Adam.
//! - [`selftrain`]: pseudo-labelling, the confidence scheduler, the combined
//!   loss and the local device update.
//! - [`federation`]: participant sampling, sample-weighted aggregation and the
//!   round loop.
//! - [`data`]: synthetic datasets, cross-validation folds and device
//!   partitioning.
//! - [`metrics`]: confusion matrices, unweighted accuracy and run comparison.
//!
//! File formats, the command line and the threaded executor live in the
//! `fedser` crate.

#![no_std]
#![warn(clippy::all)]
#![allow(clippy::too_many_arguments, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod features;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod selftrain;

pub use error::{Error, Result};
pub use scalar::Real;
