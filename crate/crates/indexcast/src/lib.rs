//! File formats, artifact store, pipeline stages and command-line driver.

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod manifest;
pub mod parallel;
pub mod stages;
pub mod store;

pub use error::{Error, Result};
