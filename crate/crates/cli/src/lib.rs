//! Command-line front end: run configuration, checkpoints, data files and
//! the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
