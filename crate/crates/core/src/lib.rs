//! Learning interactive motion from paired two-agent trajectories.
//!
//! The pipeline fits a windowed motion VAE for humans, a shared recurrent
//! task-dynamics model on human-human recordings, a robot motion VAE, and a
//! recurrent mapping from human task dynamics to robot motion latents. The
//! trained models drive closed-loop rollouts and an online predictor.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod dynamics;
pub mod embedding;
pub mod eval;
pub mod generation;
pub mod nn;
pub mod robot_map;
pub mod train;

mod error;

pub use error::{Error, Result};
