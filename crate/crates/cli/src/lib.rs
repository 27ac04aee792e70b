//! Configuration parsing and subcommand implementations behind the
//! `specgrad` binary.

pub mod commands;
pub mod config;
