//! Validation of individualized treatment effect (ITE) prediction models for two-arm
//! trials with binary endpoints.
//!
//! Discrimination: c-for-benefit matched on predicted effect ([`concordance::cben_delta`]),
//! matched on predicted control risk ([`concordance::cben_y0`]) and the model-based
//! c-for-benefit ([`concordance::mbcb`]). Calibration: offset logistic recalibration of
//! predicted effects ([`calibration::ite_calibration`]) and the average-effect error.
//! Internal (bootstrap) and external validation live in [`resampling`]; the Monte Carlo
//! harness in [`simulation`].

pub mod calibration;
pub mod concordance;
pub mod config;
pub mod data;
pub mod error;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod matching;
pub mod report;
pub mod resampling;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
