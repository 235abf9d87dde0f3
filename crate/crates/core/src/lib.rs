//! Tuning segmentation workflow parameters for accuracy and speed.

pub mod error;
pub mod exec;
pub mod maskdata;
pub mod metrics;
pub mod objective;
pub mod optimizers;
pub mod paramspace;
pub mod spatialindex;
pub mod runner;
pub mod studies;
