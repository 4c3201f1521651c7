//! Command-line pipeline and HTTP query service for diagram retrieval.

pub mod cli;
pub mod server;
