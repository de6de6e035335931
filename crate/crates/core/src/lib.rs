//! Structural model of treatment choice by experts who combine a noisy reading
//! of a machine-predicted patient type with a noisy clinical signal.
//!
//! The crate covers synthetic data generation, per-physician simulated maximum
//! likelihood with logit-smoothed accept–reject probabilities, identification
//! and fit diagnostics, and counterfactual policy and welfare evaluation.

pub mod cli;
pub mod counterfactuals;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod normal;
pub mod quadrature;
pub mod sampling;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{PatientCase, PhysicianParams, Posterior};
