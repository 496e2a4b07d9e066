//! U-turn Markov chains on the Random Hierarchy Model.
//!
//! Modules, bottom-up:
//! - [`grammar`]: sampling unambiguous hierarchical grammars and their data.
//! - [`inference`]: exact belief propagation (parsing, marginals, posterior sampling).
//! - [`chain`]: the U-turn kernel, chains, Metropolis energy modification, exact kernels.
//! - [`observables`]: layer overlaps, ergodic baselines, plateaus, relaxation times.
//! - [`theory`]: admissible counts, cascades, branching numbers and thresholds.
//! - [`oracle`]: brute-force enumeration, flip graphs, exact posteriors.
//! - [`harness`]: configuration, sweeps, CSV/JSON persistence.
//! - [`validate`]: the built-in self-check suite.

pub mod chain;
pub mod error;
pub mod grammar;
pub mod harness;
pub mod inference;
pub mod observables;
pub mod oracle;
pub mod rng;
pub mod theory;
pub mod unionfind;
pub mod validate;

pub use chain::{Energy, EnergySpec, UturnConfig};
pub use error::{Error, Result};
pub use grammar::{Grammar, GrammarParams, Symbol, TreeSample};
pub use inference::{MaskedLeaves, Parse};
pub use observables::{CorrelationCurve, Relaxation};
pub use theory::{Mode, ThresholdReport};
