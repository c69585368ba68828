pub mod cli;
pub mod error;
pub mod harness;
pub mod lstm;
pub mod reconstruction;
pub mod sensor;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
