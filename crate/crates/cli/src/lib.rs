//! Command-line pipeline and HTTP service around `stylespace-core`.

pub mod commands;
pub mod manifest;
pub mod pipeline;
pub mod server;
pub mod service;
