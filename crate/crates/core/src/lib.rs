//! Bio-impedance head-pose estimation.
//!
//! Four-channel impedance windows go in, neck/head/jaw axis-angle rotations
//! come out. The crate covers the whole path: the sensor wire codec and
//! synthetic cohort generator, a small encoder-decoder transformer built on
//! its own reverse-mode tape, training with a joint-limit penalty, and
//! MPJPE/MPVE evaluation under leave-one-person-out cross-validation.

pub mod autodiff;
pub mod biomech;
pub mod data;
pub mod error;
pub mod harness;
pub mod kinematics;
pub mod model;
pub mod pose;
pub mod rotations;

pub use error::{Error, Result};
