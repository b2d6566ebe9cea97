//! File formats, experiment orchestration and the `lsps` command-line tool
//! on top of `lsps-core`.

pub mod archive;
pub mod binio;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod loader;
pub mod output;
pub mod progress;
pub mod report;

pub use error::{Error, Result};
