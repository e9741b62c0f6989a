//! Experiment drivers for learning optimal transport maps with monotone
//! gradient networks, behind the `gradnetot` binary.
//!
//! | subcommand      | entry point                    |
//! |-----------------|--------------------------------|
//! | `gauss2d`       | [`commands::cmd_gauss2d`]      |
//! | `gauss-highdim` | [`commands::cmd_gauss_highdim`]|
//! | `morph`         | [`commands::cmd_morph`]        |
//! | `verify`        | [`commands::cmd_verify`]       |
//!
//! Each run writes CSV point sets, JSON-lines training traces, JSON
//! checkpoints, PGM frames and a `manifest.json` into its output directory.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod images;
pub mod manifest;

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
