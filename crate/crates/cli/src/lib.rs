//! Configuration and error plumbing of the `bnslim` command-line tool.

pub mod config;
pub mod failure;
