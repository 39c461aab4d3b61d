//! Batch CLI and local HTTP service on top of `pipescope-core`.

pub mod cli;
pub mod jobs;
pub mod server;
