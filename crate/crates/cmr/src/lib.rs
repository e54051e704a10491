//! Command-line runner and file formats for `cmr-core`.
//!
//! * [`idx`]: IDX image and label files.
//! * [`document`]: JSON ground-truth model files.
//! * [`output`]: CSV, PGM and JSON result files.
//! * [`parallel`]: rayon-backed [`cmr_core::experiment::Executor`].
//! * [`cli`]: the `cmr` subcommands.

pub mod cli;
pub mod document;
pub mod idx;
pub mod output;
pub mod parallel;
