//! IO companion to `recovery-core`: run configuration, file formats and
//! the replicated scenario runner behind the `recovery-sim` binary.
//!
//! All file schemas are documented in `docs/formats.md` at the repository
//! root.

pub mod config;
pub mod formats;
pub mod runner;

pub use config::{validate_config, PolicySelection, RunConfig};
pub use runner::{run, RunOptions};
