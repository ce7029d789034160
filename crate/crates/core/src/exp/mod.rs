//! Experiment manifests, the resumable runner, probes and result tables.

pub mod desk;
pub mod manifest;
pub mod probes;
pub mod results;
pub mod runner;
pub mod stats;

pub use manifest::{build_manifest, Condition, Manifest, ManifestKind, PhaseSpec, MUSIC_SEED, PAPER_SEEDS};
pub use results::{collect_rows, ResultRow, Table};
pub use runner::{Registry, RunSummary, Runner};
pub use stats::{paired_t_test, pct_delta, summarize, Summary, TTest};
