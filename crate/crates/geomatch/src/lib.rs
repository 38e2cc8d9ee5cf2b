//! Files, checkpoints and the staged training pipeline around
//! `geomatch-core`, plus the `geomatch` command-line tool.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gc_cache;
pub mod jsonl;
pub mod pipeline;
pub mod report;

pub use config::{Profile, RunConfig};
pub use error::{Error, Result};
pub use pipeline::{ModelSpec, MmVariant, Variant, Workspace};
