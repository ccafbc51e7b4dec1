//! Command-line front end for enhope.
//!
//! Every command reads its inputs from flags only. Results go to stdout as
//! `key=value` lines, per-epoch progress to stderr.

pub mod commands;
pub mod input;
pub mod plot;

pub use commands::{run, Cli};
