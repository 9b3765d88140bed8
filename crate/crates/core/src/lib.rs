//! Radio-map based localization toolkit.
//!
//! The crate is organised around the data flow of an RSS localization
//! experiment:
//!
//! - [`scene`] generates synthetic city maps, base-station and UE placements
//!   and writes datasets to disk.
//! - [`dpm_sim`] simulates pathloss and time-of-arrival maps with a
//!   dominant-path surrogate on the pixel grid.
//! - [`fingerprint`] holds the kNN and adaptive-kNN fingerprint baselines.
//! - [`ranging`] holds the ToA lateration baselines (POCS, GTRS bisection,
//!   maximum correntropy) and the log-distance RSS lateration strawman.
//! - [`heatloc`] implements heat-map localization: input encoding, the
//!   center-of-mass layer, an analytic likelihood heat map and a small
//!   LocUNet-style encoder/decoder with its training loop.
//! - [`bench`] builds the mismatch scenarios, runs every method on the same
//!   samples and renders result tables.

pub mod bench;
pub mod dpm_sim;
pub mod error;
pub mod fingerprint;
pub mod grid;
pub mod heatloc;
pub mod io;
pub mod ranging;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
pub use grid::{Grid, Pixel, Point};
