//! File formats and subcommands of the `ctmcmix` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fit;
pub mod generate;
pub mod ingest;
pub mod io;
pub mod predict;
pub mod sweep;

pub use error::{CliError, Result};
