//! Physics-informed input-space construction for impact-energy regression
//! on composite panels.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod doe;
pub mod dsp;
pub mod error;
pub mod features;
pub mod linalg;
pub mod mlp;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod synthgen;

pub use error::{Error, Result};
