//! Command-line front end: image ingestion, run configuration, execution
//! and artifact export for the registration library.

pub mod config;
pub mod imageio;
pub mod runner;
