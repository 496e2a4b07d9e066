//! Parallel `(f, ρ)` sweeps.
//!
//! Work is split into `(cell, realization, chain block)` tasks. Each task owns
//! the RNG streams of its chains and returns a partial curve accumulator;
//! partials are merged in task order, so results do not depend on how many
//! workers ran them. Streams:
//!
//! - grammar of realization `r`: `derive_seed(master, Grammar, [v, s, L, m, r])`,
//!   shared by all cells with the same `(v, s, L, m)`;
//! - initial state of chain `c`: `Data[cell, r, c]` (`Data[cell, r]` with `shared_x0`);
//! - chain moves: `Chain[cell, r, c]`;
//! - independent pairs for the overlap std: `Pairs[cell, r]`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{cells, Cell, ExperimentConfig, TauMethod};
use crate::chain::{run_chain, run_mh_chain, UturnConfig};
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::observables::{
    ergodic_baselines, layer_overlap, normalized_curve, plateau, relaxation_time, relaxation_time_fit,
    CompensatedSum, CorrelationCurve, CurveAccumulator, OverlapRecorder, Relaxation,
};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Chains per task.
pub const CHAIN_BLOCK: usize = 8;

/// Threshold in overlap-std units separating memory from ergodic cells.
pub const MEMORY_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub baseline: f64,
    pub plateau: f64,
    pub plateau_stderr: f64,
    pub plateau_over_std: f64,
    /// In steps.
    pub tau: Relaxation,
}

impl LevelSummary {
    pub fn retains_memory(&self) -> bool {
        self.plateau_over_std > MEMORY_THRESHOLD
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffSummary {
    pub n_max: usize,
    pub levels: Vec<LevelSummary>,
}

impl CutoffSummary {
    /// `sign(τ_top - τ_bottom)` over the reported levels, when both relaxed.
    pub fn inversion(&self) -> Option<i8> {
        let (first, last) = (self.levels.first()?, self.levels.last()?);
        let (lo, hi) = (first.tau.tau()?, last.tau.tau()?);
        Some(match hi.partial_cmp(&lo)? {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => -1,
            std::cmp::Ordering::Equal => 0,
        })
    }

    pub fn ordering_score(&self) -> Option<i64> {
        let taus: Vec<Relaxation> = self.levels.iter().map(|l| l.tau).collect();
        crate::observables::ordering_score(&taus)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    /// Normalized curves for every level, recorded to the largest cutoff.
    pub curves: Vec<CorrelationCurve>,
    /// Standard deviation of a single independent-pair overlap, by level.
    pub pair_std: Vec<f64>,
    /// `pair_std / sqrt(total chains)`: the unit of `plateau_over_std`.
    pub unit_std: Vec<f64>,
    pub cutoffs: Vec<CutoffSummary>,
    pub grammar_seeds: Vec<u64>,
    pub n_chains: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub cells: Vec<std::result::Result<CellResult, CellFailure>>,
}

impl SweepResult {
    pub fn successes(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter_map(|c| c.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellFailure> {
        self.cells.iter().filter_map(|c| c.as_ref().err())
    }
}

struct Task {
    cell: usize,
    realization: usize,
    chains: std::ops::Range<usize>,
}

enum Partial {
    Curves(CurveAccumulator),
    Pairs(Vec<(CompensatedSum, CompensatedSum)>),
}

pub fn grammar_seed(master: u64, cell: &Cell, realization: usize) -> u64 {
    let key = [cell.v, cell.s, cell.depth, cell.m, realization].map(|x| x as u64);
    derive_seed(master, Stream::Grammar, &key)
}

fn recording_steps(n_max: usize, stride: usize) -> Vec<usize> {
    (0..=n_max).step_by(stride).collect()
}

fn run_block(config: &ExperimentConfig, cell: &Cell, grammar: &Grammar, task: &Task) -> Result<CurveAccumulator> {
    let n_steps = *cell.n_max.iter().max().expect("validated");
    let steps = recording_steps(n_steps, config.record_stride);
    let mut acc = CurveAccumulator::new(steps, cell.depth + 1);
    let (ci, r) = (cell.index as u64, task.realization as u64);
    for c in task.chains.clone() {
        let c = c as u64;
        let mut data_rng = if config.shared_x0 {
            stream_rng(config.master_seed, Stream::Data, &[ci, r])
        } else {
            stream_rng(config.master_seed, Stream::Data, &[ci, r, c])
        };
        let x0 = grammar.generate(&mut data_rng);
        let mut rng = stream_rng(config.master_seed, Stream::Chain, &[ci, r, c]);
        let cfg = UturnConfig { record_stride: config.record_stride, ..UturnConfig::new(cell.k, n_steps) };
        let mut rec = OverlapRecorder::new(x0.clone());
        match &config.energy {
            Some(energy) => run_mh_chain(grammar, &x0, &cfg, energy, &mut [&mut rec], &mut rng)?,
            None => run_chain(grammar, &x0, &cfg, &mut [&mut rec], &mut rng)?,
        };
        acc.add_recorder(&rec);
    }
    Ok(acc)
}

fn run_pairs(config: &ExperimentConfig, cell: &Cell, grammar: &Grammar, realization: usize) -> Vec<(CompensatedSum, CompensatedSum)> {
    let mut rng = stream_rng(config.master_seed, Stream::Pairs, &[cell.index as u64, realization as u64]);
    let mut acc = vec![(CompensatedSum::default(), CompensatedSum::default()); cell.depth + 1];
    for _ in 0..config.baseline_pairs {
        let a = grammar.generate(&mut rng);
        let b = grammar.generate(&mut rng);
        for (level, (s1, s2)) in acc.iter_mut().enumerate() {
            let q = layer_overlap(&a, &b, level).expect("same grammar");
            s1.add(q);
            s2.add(q * q);
        }
    }
    acc
}

fn summarize(config: &ExperimentConfig, cell: &Cell, acc: &CurveAccumulator, pairs: &[(CompensatedSum, CompensatedSum)], seeds: Vec<u64>) -> Result<CellResult> {
    let params = cell.params(0, config.shared_rules);
    let baselines = ergodic_baselines(&params);
    let n_pairs = (config.baseline_pairs * config.realizations) as f64;
    let n_chains = acc.n_chains();
    let pair_std: Vec<f64> = pairs
        .iter()
        .map(|(s1, s2)| {
            let mean = s1.value() / n_pairs;
            let var = if n_pairs > 1.0 { (s2.value() / n_pairs - mean * mean).max(0.0) * n_pairs / (n_pairs - 1.0) } else { 0.0 };
            var.sqrt()
        })
        .collect();
    let unit_std: Vec<f64> = pair_std.iter().map(|s| s / (n_chains as f64).sqrt()).collect();
    let curves = acc
        .curves(cell.k)
        .into_iter()
        .map(|c| {
            let b = baselines[c.level];
            normalized_curve(c, b)
        })
        .collect::<Result<Vec<_>>>()?;
    let levels: Vec<usize> = match &config.levels {
        Some(ls) => ls.clone(),
        None => (0..=cell.depth).collect(),
    };
    if let Some(&bad) = levels.iter().find(|&&l| l > cell.depth) {
        return Err(Error::LevelOutOfRange { level: bad, depth: cell.depth });
    }
    let mut cutoffs = Vec::new();
    for &n_max in &cell.n_max {
        let mut rows = Vec::new();
        for &level in &levels {
            let curve = &curves[level];
            let p = plateau(curve, n_max, config.window)?;
            let tau = match config.tau_method {
                TauMethod::Crossing => relaxation_time(curve, n_max, config.window)?,
                TauMethod::Fit => relaxation_time_fit(curve, n_max, config.window)?,
            };
            rows.push(LevelSummary {
                level,
                baseline: curve.baseline,
                plateau: p.value,
                plateau_stderr: p.stderr,
                plateau_over_std: if unit_std[level] > 0.0 { p.over_std(curve.baseline, unit_std[level]) } else { f64::NAN },
                tau,
            });
        }
        cutoffs.push(CutoffSummary { n_max, levels: rows });
    }
    Ok(CellResult { cell: cell.clone(), curves, pair_std, unit_std, cutoffs, grammar_seeds: seeds, n_chains })
}

/// Run every cell of the grid. Per-cell failures are collected, not fatal.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    let grid = cells(config)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = config.workers {
            b = b.num_threads(w);
        }
        b.build().map_err(|e| Error::Config(e.to_string()))?
    };
    pool.install(|| sweep_in_pool(config, grid))
}

fn sweep_in_pool(config: &ExperimentConfig, grid: Vec<Cell>) -> Result<SweepResult> {
    // Grammars, keyed by (v, s, L, m, realization) so cells can share them.
    let mut keys: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    let mut key_of_cell = Vec::with_capacity(grid.len());
    let mut key_index = HashMap::new();
    for cell in &grid {
        let ids: Vec<usize> = (0..config.realizations)
            .map(|r| {
                let key = (cell.v, cell.s, cell.depth, cell.m, r);
                *key_index.entry(key).or_insert_with(|| {
                    keys.push(key);
                    keys.len() - 1
                })
            })
            .collect();
        key_of_cell.push(ids);
    }
    let grammars: Vec<Result<(u64, Grammar)>> = keys
        .par_iter()
        .map(|&(v, s, depth, m, r)| {
            let probe = Cell { v, s, depth, m, ..grid[0].clone() };
            let seed = grammar_seed(config.master_seed, &probe, r);
            let params = probe.params(seed, config.shared_rules);
            Grammar::sample(&params).map(|g| (seed, g))
        })
        .collect();

    let mut tasks = Vec::new();
    for cell in &grid {
        for r in 0..config.realizations {
            tasks.push((Task { cell: cell.index, realization: r, chains: 0..0 }, true));
            let mut start = 0;
            while start < config.chains {
                let end = (start + CHAIN_BLOCK).min(config.chains);
                tasks.push((Task { cell: cell.index, realization: r, chains: start..end }, false));
                start = end;
            }
        }
    }
    let partials: Vec<Result<Partial>> = tasks
        .par_iter()
        .map(|(task, is_pairs)| {
            let cell = &grid[task.cell];
            let (_, grammar) = grammars[key_of_cell[task.cell][task.realization]].as_ref().map_err(|e| Error::Config(e.to_string()))?;
            if *is_pairs {
                Ok(Partial::Pairs(run_pairs(config, cell, grammar, task.realization)))
            } else {
                run_block(config, cell, grammar, task).map(Partial::Curves)
            }
        })
        .collect();

    // Sequential, order-fixed merge.
    let mut per_cell: Vec<(Option<CurveAccumulator>, Option<Vec<(CompensatedSum, CompensatedSum)>>, Option<String>)> =
        (0..grid.len()).map(|_| (None, None, None)).collect();
    for ((task, _), partial) in tasks.iter().zip(partials) {
        let slot = &mut per_cell[task.cell];
        match partial {
            Err(e) => {
                slot.2.get_or_insert_with(|| e.to_string());
            }
            Ok(Partial::Curves(acc)) => match &mut slot.0 {
                Some(total) => total.merge(&acc),
                None => slot.0 = Some(acc),
            },
            Ok(Partial::Pairs(p)) => match &mut slot.1 {
                Some(total) => {
                    for ((a1, a2), (b1, b2)) in total.iter_mut().zip(&p) {
                        a1.merge(b1);
                        a2.merge(b2);
                    }
                }
                None => slot.1 = Some(p),
            },
        }
    }

    let results: Vec<_> = grid
        .iter()
        .zip(per_cell)
        .zip(&key_of_cell)
        .map(|((cell, (acc, pairs, err)), keys)| {
            let outcome = match (err, acc, pairs) {
                (Some(e), _, _) => Err(e),
                (None, Some(acc), Some(pairs)) => {
                    let seeds = keys.iter().map(|&k| grammars[k].as_ref().map(|(s, _)| *s).unwrap_or(0)).collect();
                    summarize(config, cell, &acc, &pairs, seeds).map_err(|e| e.to_string())
                }
                _ => Err("no work was scheduled for this cell".to_string()),
            };
            outcome.map_err(|error| CellFailure { cell: cell.clone(), error })
        })
        .collect();
    Ok(SweepResult { config: config.clone(), cells: results })
}
