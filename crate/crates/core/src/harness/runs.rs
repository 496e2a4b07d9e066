//! Single-grammar runs behind the `gen`, `chain`, `mh` and `oracle` commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{curve_rows, write_csv, write_json_file, RunManifest, TaskSeed};
use crate::chain::{exact_kernel, run_chain, run_mh_chain, EnergySpec, Observer, UturnConfig, KERNEL_BUDGET};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, TreeSample};
use crate::observables::{ergodic_baselines, normalized_curve, CorrelationCurve, CurveAccumulator, OverlapRecorder};
use crate::oracle::{build_flip_graph, component_stats, enumerate_sentences, mean_exact_plateaus, reweighted_law, ComponentStats};
use crate::rng::{stream_rng, Stream};

fn join(symbols: &[u16]) -> String {
    symbols.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRow {
    pub sample: usize,
    pub root: u16,
    /// Space-separated leaf symbols.
    pub leaves: String,
}

/// `n` sentences drawn with stream `Data[i]` for sample `i`.
pub fn sample_sentences(grammar: &Grammar, n: usize, seed: u64) -> Vec<SentenceRow> {
    (0..n)
        .map(|i| {
            let x = grammar.generate(&mut stream_rng(seed, Stream::Data, &[i as u64]));
            SentenceRow { sample: i, root: x.root(), leaves: join(x.leaves()) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub k: usize,
    pub n_steps: usize,
    pub chains: usize,
    pub record_stride: usize,
    pub seed: u64,
    pub energy: Option<EnergySpec>,
    /// Keep per-chain overlap traces.
    pub trace: bool,
}

/// Per-chain trace row: `chain_id, step, cumulative_masks, level, overlap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub chain_id: usize,
    pub step: usize,
    pub cumulative_masks: u64,
    pub level: usize,
    pub overlap: f64,
}

#[derive(Debug, Clone)]
pub struct ChainRunOutput {
    pub curves: Vec<CorrelationCurve>,
    pub traces: Vec<TraceRow>,
    /// Metropolis acceptance rate per chain.
    pub acceptance: Vec<f64>,
}

/// Chains on one grammar. Chain `c` starts from `Data[c]` and moves with `Chain[c]`.
pub fn run_chains(grammar: &Grammar, spec: &ChainSpec) -> Result<ChainRunOutput> {
    let steps: Vec<usize> = (0..=spec.n_steps).step_by(spec.record_stride.max(1)).collect();
    let mut acc = CurveAccumulator::new(steps, grammar.depth() + 1);
    let mut traces = Vec::new();
    let mut acceptance = Vec::new();
    let cfg = UturnConfig { record_stride: spec.record_stride, seed: spec.seed, ..UturnConfig::new(spec.k, spec.n_steps) };
    for c in 0..spec.chains {
        let x0 = grammar.generate(&mut stream_rng(spec.seed, Stream::Data, &[c as u64]));
        let mut rng = stream_rng(spec.seed, Stream::Chain, &[c as u64]);
        let mut rec = OverlapRecorder::new(x0.clone());
        let trace = match &spec.energy {
            Some(e) => run_mh_chain(grammar, &x0, &cfg, e, &mut [&mut rec], &mut rng)?,
            None => run_chain(grammar, &x0, &cfg, &mut [&mut rec], &mut rng)?,
        };
        if let Some(rate) = trace.acceptance_rate() {
            acceptance.push(rate);
        }
        if spec.trace {
            for (level, series) in rec.values.iter().enumerate() {
                for (&step, &overlap) in rec.steps.iter().zip(series) {
                    traces.push(TraceRow { chain_id: c, step, cumulative_masks: (step * spec.k) as u64, level, overlap });
                }
            }
        }
        acc.add_recorder(&rec);
    }
    let baselines = ergodic_baselines(grammar.params());
    let curves = acc
        .curves(spec.k)
        .into_iter()
        .map(|c| {
            let b = baselines[c.level];
            normalized_curve(c, b)
        })
        .collect::<Result<_>>()?;
    Ok(ChainRunOutput { curves, traces, acceptance })
}

/// Write `curves.csv`, optionally `trace.csv` with its `trace.json` sidecar, and the manifest.
pub fn write_chain_run(dir: &Path, grammar: &Grammar, spec: &ChainSpec, out: &ChainRunOutput) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = RunManifest::new("chain", serde_json::json!({ "grammar": grammar.params(), "chain": spec }));
    manifest.seeds.push(TaskSeed { cell: 0, realization: 0, grammar_seed: grammar.params().seed });
    manifest.files.push(write_csv(dir, "curves.csv", &curve_rows(&out.curves))?);
    if spec.trace {
        manifest.files.push(write_csv(dir, "trace.csv", &out.traces)?);
        let sidecar = serde_json::json!({
            "grammar": grammar.params(),
            "chain": spec,
            "seeds": { "initial_state": "Data[chain_id]", "moves": "Chain[chain_id]", "master": spec.seed },
            "acceptance": out.acceptance,
        });
        manifest.files.push(write_json_file(dir, "trace.json", &sidecar)?);
    }
    manifest.finish(dir)
}

/// Histogram row of a Metropolis run over enumerated sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub sentence: usize,
    pub leaves: String,
    pub count: u64,
    pub empirical: f64,
    /// `P_H` over all sentences.
    pub target: f64,
    /// `P_H` restricted to the component reachable from the initial state.
    pub target_reachable: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MhReport {
    pub k: usize,
    pub n_steps: usize,
    pub energy: EnergySpec,
    pub acceptance_rate: f64,
    pub reachable: Option<usize>,
    /// Total-variation distance to the reachable-component target.
    pub tv_reachable: Option<f64>,
    pub tv_full: f64,
    #[serde(skip)]
    pub rows: Vec<HistogramRow>,
}

struct Visits<'a> {
    set: &'a crate::oracle::SentenceSet,
    counts: Vec<u64>,
}

impl Observer for Visits<'_> {
    fn observe(&mut self, step: usize, x: &TreeSample) {
        if step > 0 {
            let id = self.set.id_of(x.leaves()).expect("chain left the sentence set");
            self.counts[id] += 1;
        }
    }
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// One Metropolis chain of `n_steps` on an enumerable grammar, histogrammed over sentences.
pub fn mh_histogram(grammar: &Grammar, k: usize, n_steps: usize, energy: &EnergySpec, seed: u64, budget: usize) -> Result<MhReport> {
    let set = enumerate_sentences(grammar, budget)?;
    let x0 = grammar.generate(&mut stream_rng(seed, Stream::Data, &[0]));
    let start = set.id_of(x0.leaves()).ok_or(Error::EmptySupport)?;
    let mut visits = Visits { set: &set, counts: vec![0; set.len()] };
    let cfg = UturnConfig { seed, ..UturnConfig::new(k, n_steps) };
    let trace = run_mh_chain(grammar, &x0, &cfg, energy, &mut [&mut visits], &mut stream_rng(seed, Stream::Chain, &[0]))?;
    let empirical: Vec<f64> = visits.counts.iter().map(|&c| c as f64 / n_steps.max(1) as f64).collect();
    let full = reweighted_law(&set, energy, None);
    let restricted = if set.len() <= KERNEL_BUDGET {
        let labels = exact_kernel(grammar, k, KERNEL_BUDGET)?.components();
        let members: Vec<usize> = (0..set.len()).filter(|&i| labels[i] == labels[start]).collect();
        Some(reweighted_law(&set, energy, Some(&members)))
    } else {
        None
    };
    let rows = (0..set.len())
        .map(|i| HistogramRow {
            sentence: i,
            leaves: join(set.tree(i).leaves()),
            count: visits.counts[i],
            empirical: empirical[i],
            target: full[i],
            target_reachable: restricted.as_ref().map(|r| r[i]),
        })
        .collect();
    Ok(MhReport {
        k,
        n_steps,
        energy: energy.clone(),
        acceptance_rate: trace.acceptance_rate().unwrap_or(0.0),
        reachable: restricted.as_ref().map(|r| r.iter().filter(|&&p| p > 0.0).count()),
        tv_reachable: restricted.as_ref().map(|r| total_variation(&empirical, r)),
        tv_full: total_variation(&empirical, &full),
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactPlateau {
    pub level: usize,
    pub baseline: f64,
    /// Mean long-time overlap of a single-flip chain from a uniform start.
    pub overlap: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub components: Vec<ComponentStats>,
    /// By realization, then level.
    pub plateaus: Vec<Vec<ExactPlateau>>,
}

/// Flip-graph statistics and exact plateaus for `grammars` (one per realization).
pub fn oracle_report(grammars: &[Grammar], budget: usize) -> Result<OracleReport> {
    let mut components = Vec::new();
    let mut plateaus = Vec::new();
    for (r, g) in grammars.iter().enumerate() {
        components.push(component_stats(g, r, budget)?);
        let set = enumerate_sentences(g, budget)?;
        let graph = build_flip_graph(&set);
        let baselines = ergodic_baselines(g.params());
        plateaus.push(
            mean_exact_plateaus(&graph, &set)
                .into_iter()
                .enumerate()
                .map(|(level, overlap)| ExactPlateau {
                    level,
                    baseline: baselines[level],
                    overlap,
                    normalized: (overlap - baselines[level]) / (1.0 - baselines[level]),
                })
                .collect(),
        );
    }
    Ok(OracleReport { components, plateaus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::GrammarParams;

    fn grammar(v: usize, m: usize, depth: usize, seed: u64) -> Grammar {
        Grammar::sample(&GrammarParams::new(v, 2, depth, m, seed)).unwrap()
    }

    #[test]
    fn sentences_are_valid_and_reproducible() {
        let g = grammar(4, 2, 3, 1);
        let a = sample_sentences(&g, 5, 9);
        assert_eq!(a, sample_sentences(&g, 5, 9));
        assert!(a.iter().all(|r| r.leaves.split(' ').count() == 8));
    }

    #[test]
    fn chain_run_shapes() {
        let g = grammar(4, 2, 2, 0);
        let spec = ChainSpec { k: 2, n_steps: 10, chains: 3, record_stride: 2, seed: 1, energy: None, trace: true };
        let out = run_chains(&g, &spec).unwrap();
        assert_eq!(out.curves.len(), 3);
        assert_eq!(out.curves[0].steps, vec![0, 2, 4, 6, 8, 10]);
        assert_eq!(out.traces.len(), 3 * 3 * 6);
        assert!(out.acceptance.is_empty());
        assert!(out.curves.iter().all(|c| c.raw[0] == 1.0));
    }

    #[test]
    fn zero_energy_histogram_accepts_everything() {
        let g = grammar(4, 2, 2, 0);
        let r = mh_histogram(&g, 2, 2000, &EnergySpec::Zero, 3, 1000).unwrap();
        assert_eq!(r.acceptance_rate, 1.0);
        assert_eq!(r.rows.iter().map(|x| x.count).sum::<u64>(), 2000);
        assert!(r.tv_reachable.unwrap() < 0.2);
    }

    #[test]
    fn oracle_report_normalizes_plateaus() {
        let g = grammar(4, 4, 2, 0);
        let report = oracle_report(&[g], 1000).unwrap();
        // f = 1 at v = 4, s = 2: every string is a sentence and the flip graph is connected.
        assert_eq!(report.components[0].n_components, 1);
        for p in &report.plateaus[0] {
            assert!(p.normalized.abs() < 1e-12, "{p:?}");
        }
    }
}
