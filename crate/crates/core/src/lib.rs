//! Lensless imaging with a bare sensor, end to end in simulation.
//!
//! A point source in front of an optics-free sensor still leaves a usable
//! fingerprint: a smooth radiometric envelope, fixed cover-glass texture, and
//! dust shadows that shift with the source position. Recording one sensor
//! frame per source builds a calibration matrix `A`; an arbitrary scene `x`
//! then produces the measurement `b = A x`, and the scene is recovered by
//! Tikhonov-regularized least squares.
//!
//! The crate is organized around that pipeline:
//!
//! - [`scene`]: source grids, test patterns, video sequences, flattening
//!   conventions.
//! - [`optics`]: the synthetic sensor physics (PSF rendering, noise,
//!   quantization, frame averaging).
//! - [`calibration`]: calibration-matrix acquisition, persistence, masking,
//!   and field-of-view estimates.
//! - [`solver`]: SVD, regularized inversion, regularization-parameter
//!   selection, precomputed reconstructors, and multi-distance refocusing.
//! - [`diagnostics`]: singular-value decay, correlation maps, thresholding,
//!   and reconstruction scoring.
//! - [`io`]: the PGM, LFR1, LCAL1 and LREC1 file formats plus CSV export.
//! - [`config`]: run configuration, default setups, and config hashing.

pub mod calibration;
pub mod config;
pub mod diagnostics;
mod error;
pub mod io;
pub mod optics;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
