//! Dynamic state estimation workbench for multi-machine power systems.
//!
//! Simulates a two-axis 4th-order generator model under model uncertainty and
//! cyber attacks against synchrophasor measurements, runs five estimators
//! (EKF, UKF, SR-UKF, CKF, and an LMI-based nonlinear observer) on the
//! corrupted streams, and scores them with detection and error metrics.

pub mod casegen;
pub mod detect;
pub mod error;
pub mod filters;
pub mod noise_attacks;
pub mod observer;
pub mod powermodel;
pub mod scenario;
pub mod sim;

pub use error::{DseError, Result};
pub use powermodel::{MachineParams, SystemCase};
