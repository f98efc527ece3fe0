//! Core building blocks of an adaptive real-time video uplink pipeline.
//!
//! The crate is `no_std` (alloc only) and fully deterministic: given the same
//! scenario and seed, every simulation produces bit-identical results. It
//! models a client that streams synthetic video frames over a time-varying
//! bottleneck link to an edge server, which measures the link rate per epoch,
//! feeds estimates back, and schedules per-frame inference jobs on a bounded
//! worker pool. The client predicts the next-epoch link rate and adapts the
//! encoder bitrate, resolution tier, and a secondary high-resolution stream.
//!
//! IO, file formats, the CLI, and the live socket mode live in the companion
//! `uplink-cli` crate.

#![no_std]
#![deny(unsafe_code)]
// Validations use `!(x > 0.0)` on purpose: it rejects NaN from parsed
// scenarios where `x <= 0.0` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::field_reassign_with_default)]

extern crate alloc;

pub mod controller;
pub mod edge;
pub mod error;
pub mod estimator;
pub(crate) mod math;
pub mod media;
pub mod metrics;
pub mod netem;
pub mod scenario;
pub mod sim;
pub mod transport;

pub use error::{Error, Result};
