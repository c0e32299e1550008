//! Library half of the `heavyrush` command-line tool: CSV ingestion, JSON
//! configuration, report types and the subcommands themselves. The binary
//! only parses flags and maps outcomes to exit codes.

// NaN must fail validity checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;

pub use error::{CliError, Result};
