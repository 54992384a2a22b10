//! Files, checkpoints, configuration and commands around [`adn_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod report;
pub mod run;
pub mod series;
pub mod store;

pub use error::{Error, Result};
