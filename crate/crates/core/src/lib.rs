//! Vicious-classifier benchmark: joint training of a classifier and an
//! input-reconstruction decoder, the Mahalanobis reconstruction risk,
//! output-channel defenses and a detector for vicious models.

pub mod container;
pub mod datahub;
pub mod error;
pub mod jointtrain;
pub mod nets;
pub mod objectives;
pub mod outputguard;
pub mod riskmeter;
pub mod scalar;
pub mod sentinel;

pub use error::{Error, Result};
