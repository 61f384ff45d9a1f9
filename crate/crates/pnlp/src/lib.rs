//! File formats, dataset IO, run configuration and the `pnlp` command line
//! on top of `pnlp-core`.

mod binary;
pub mod cache_file;
pub mod cli;
pub mod config;
pub mod error;
pub mod features_file;
pub mod import;
pub mod io;
pub mod model_file;

pub use config::RunConfig;
pub use error::{CliError, Result};
