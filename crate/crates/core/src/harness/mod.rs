//! Experiment orchestration: configuration, sweeps, single-grammar runs and persistence.

pub mod config;
pub mod output;
pub mod runs;
pub mod sweep;

pub use config::{cells, snap_density, Cell, ExperimentConfig, TauMethod, OUT_DIR_ENV};
pub use output::{write_sweep, RunManifest};
pub use runs::{mh_histogram, oracle_report, run_chains, sample_sentences, ChainSpec};
pub use sweep::{run_sweep, CellResult, SweepResult};
