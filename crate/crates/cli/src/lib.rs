//! Command-line pipeline and HTTP service over a workbench project.

pub mod args;
pub mod commands;
pub mod error;
pub mod ops;
pub mod server;
pub mod store;
