//! Bidirectional spike-based distillation: paired feedforward and feedback
//! spiking networks trained with layer-local voltage alignment.

pub mod baseline;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod models;
pub mod loss;
pub mod math;
pub mod neuron;
pub mod optim;
pub mod parallel;
pub mod run;
pub mod train;

pub use error::{Error, Result};
