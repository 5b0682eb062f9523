//! Command-line driver: every subcommand produces a [`Report`] whose verdicts
//! decide the exit status.

pub mod cli;
pub mod commands;
pub mod data;
pub mod report;

pub use cli::{run, Cli, Command};
pub use report::Report;
