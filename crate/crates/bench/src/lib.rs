//! Shared fixtures for the criterion benchmarks.

use uturn_core::{Grammar, GrammarParams};

/// Grammar used by the benchmarks: `s = 2`, `v = 16`, depth and `m` as given.
pub fn bench_grammar(depth: usize, m: usize) -> Grammar {
    Grammar::sample(&GrammarParams::new(16, 2, depth, m, 0xBEEF)).expect("valid benchmark parameters")
}
