//! Short-range line-of-sight MIMO channel estimation toolkit.
//!
//! At millimeter-wave carrier frequencies a receive array can easily be as
//! long as its distance to the transmitter. A single plane-wave angle then no
//! longer describes the whole aperture: every subarray sees the transmitter
//! under its own local angle-of-arrival (AoA). This crate simulates that
//! regime end to end and estimates the channel from very few pilots:
//!
//! * [`geometry`] — planar transceiver placement, near-field LoS channels,
//!   exact local-AoA oracles, optional single-bounce wall reflections.
//! * [`sounding`] — Zadoff-Chu analog beam-training codebooks, compressive
//!   pilot acquisition through the subarray RF chains, per-subarray complex
//!   gain estimation via a sign-flipped probe beam.
//! * [`inference`] — per-subarray AoA likelihoods on a uniform angular grid,
//!   geometry factors coupling neighbouring subarrays, and sum-product
//!   forward/backward passes along the subarray chain ("GMP"), plus the
//!   independent maximum-likelihood baseline.
//! * [`reconstruction`] — bearing-ray triangulation of the outer TX antennas,
//!   full channel rebuild from estimated coordinates, and SVD/water-filling
//!   achievable-rate scoring.
//! * [`harness`] — seeded, parallel Monte Carlo experiments with CSV output.
//! * [`config`], [`cache`], [`commands`] — JSON configuration, on-disk factor
//!   table cache, and the `factors | estimate | simulate` command front end.
//!
//! The `examples/` directory walks through each capability; `cargo run
//! --example message_passing_repair` is a good place to start.

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod inference;
pub mod reconstruction;
pub mod sounding;

pub use error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex<f64>;

/// 2-D position / direction vector in meters.
pub type Vec2 = nalgebra::Vector2<f64>;
