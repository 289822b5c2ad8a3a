//! Configuration and file formats of the `reedhb` command.

pub mod config;
pub mod output;
