//! Simulation and calibration toolkit for time-bin entangled photon pairs
//! emitted by a laser-driven quantum dot.
//!
//! The pipeline runs the dot's master equation ([`lindblad`]), converts the
//! trajectory into coincidence counts of sixteen projective measurements
//! ([`emission`]), reconstructs the two-photon density matrix by linear
//! inversion ([`tomography`]) and scores it against the Bell state.
//! [`calibration`] fits model parameters to Rabi and decay data and
//! [`sweep`] maps fidelity and brightness over pulse parameters.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod config;
pub mod density;
pub mod emission;
pub mod error;
pub mod integrator;
pub mod io;
pub mod lindblad;
pub mod model;
pub mod pipeline;
pub mod sweep;
pub mod tomography;

pub use density::DensityMatrix;
pub use error::{Error, Result};
pub use model::ModelParams;
