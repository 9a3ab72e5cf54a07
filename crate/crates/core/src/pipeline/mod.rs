//! File-based pipeline: one command per stage, a manifest of fingerprints
//! chaining them together, and the speed/accuracy bench.

pub mod bench;
pub mod commands;
pub mod io;
pub mod manifest;

pub use bench::{measure_speedup, parse_methods, time_median, BenchReport, BenchRow, Method, Strategy};
pub use commands::*;
pub use manifest::{ArtifactRecord, RunManifest, MANIFEST_FILE};
