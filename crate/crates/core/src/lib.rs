//! Simulator and estimators for the optical charge-state cycle of a
//! lead-vacancy center in diamond.
//!
//! The center alternates between a bright negatively charged state and a
//! dark state under blue (445 nm) shelving and green (532 nm) repump light.
//! [`trajectory`] samples that cycle under the pulse protocols of [`pulse`];
//! [`estimators`] and [`ple`] recover rates, exponents, populations and line
//! widths from the resulting photon counts.

pub mod config;
pub mod error;
pub mod estimators;
pub mod lm;
pub mod mechanism;
pub mod output;
pub mod ple;
pub mod pulse;
pub mod rate_model;
pub mod reproduce;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
