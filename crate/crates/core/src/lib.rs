//! Multi-modal activity recognition from wearable IMU signals.
//!
//! The crate turns raw 10-channel IMU recordings (acceleration, angular
//! velocity, orientation quaternion) into labeled fixed-width windows, maps
//! each window to two image representations (a log-magnitude frequency
//! spectrum and an orientation-changing-history raster), trains a small
//! convolutional network per representation, and fuses the per-modality
//! probability outputs into a single decision. A parametric synthetic-data
//! generator and a protocol-driven evaluation harness (half-half and
//! leave-one-subject-out) make the whole pipeline verifiable end to end.

pub mod augment;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod imu;
pub mod nn;
pub mod protocol;
pub mod quat;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use imu::{Annotation, Dataset, ImuRecord, ImuWindow, Recording};
pub use quat::{Quaternion, Vec3};
