//! Unsupervised segmentation of surgical demonstrations into gestures.
//!
//! Kinematic trajectories are turned into motion profiles whose peaks become
//! critical points; density clustering merges them into candidate
//! boundaries, optionally fused with boundaries found by clustering visual
//! features.

pub mod changepoints;
pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod hyperopt;
pub mod pipeline;
pub mod profiles;

pub use error::{Error, Result};
