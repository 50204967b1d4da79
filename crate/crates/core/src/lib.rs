//! Meta-imitation learning toolkit for a single-joint elbow exoskeleton.
//!
//! The pipeline retargets skeletal keypoint motion onto a human arm model,
//! extracts elbow-flexion trajectories, meta-trains a task-conditioned
//! next-step predictor with MAML, adapts it to a new user from one unassisted
//! demonstration, and tracks the generated reference with a PD controller
//! with gravity compensation on a simulated joint.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod dataset;
mod error;
pub mod kinematics;
pub mod meta;
pub mod simcontrol;
pub mod tasknet;

pub use error::{Error, Result};
