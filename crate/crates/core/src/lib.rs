pub mod cli;
pub mod dataio;
pub mod denoiser;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod genome;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod server;
pub mod tensor;

pub use error::{Error, Result};
