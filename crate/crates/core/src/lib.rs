//! Modular graph policies for legged/wheeled robots, trained with
//! model-based reinforcement learning plus imitation of demonstrations that
//! may come from other robot designs.

pub mod autodiff;
pub mod design;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod nets;
pub mod rng;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
