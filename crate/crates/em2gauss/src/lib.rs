//! Command-line drivers and file formats around [`em2gauss_core`].
//!
//! * [`config`]: the flat `key = value` run configuration.
//! * [`io`]: CSV output (17 significant digits), manifests and batch files.
//! * [`exec`]: a rayon-backed executor for grid cells and trials.
//! * [`commands`]: `converge`, `pipeline`, `field`, `scaling`, `tensteps`, `sample`.
//! * [`cli`]: argument parsing and exit codes (0 success, 1 usage or config
//!   error, 2 algorithmic failure).

pub mod cli;
pub mod commands;
pub mod config;
pub mod exec;
pub mod io;
