//! Library side of the `hyperdt` command: file formats, the fast-versus-reference
//! comparison, benchmarks and the command implementations.

pub mod bench;
pub mod commands;
pub mod compare;
pub mod dataset;
pub mod error;
pub mod model_file;

pub use error::{CliError, Result};
