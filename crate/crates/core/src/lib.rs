pub mod analysis;
pub mod channel;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod engine;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod loss;
pub mod receiver;
pub mod rng;
pub mod scheduler;

pub use error::{Error, Result};
