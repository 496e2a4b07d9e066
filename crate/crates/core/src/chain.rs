//! U-turn moves: mask `k` leaves, resample them from the exact posterior.
//!
//! Iterating the move gives a Markov chain that is reversible with respect to
//! the uniform law on valid sentences. [`mh_step`] adds a Metropolis filter
//! for targets `P_H(x) ∝ P(x) exp(-H(x))`, and [`exact_kernel`] builds the full
//! transition matrix on enumerable instances.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, Symbol, TreeSample};
use crate::inference::{posterior_sample, probability_from_messages, upward_pass, MaskedLeaves};
use crate::oracle::{enumerate_sentences, SentenceSet};
use crate::unionfind::DisjointSet;

/// Energy function over trees.
pub trait Energy: Send + Sync {
    fn energy(&self, x: &TreeSample) -> f64;
}

impl<F> Energy for F
where
    F: Fn(&TreeSample) -> f64 + Send + Sync,
{
    fn energy(&self, x: &TreeSample) -> f64 {
        self(x)
    }
}

/// Built-in energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergySpec {
    #[default]
    Zero,
    /// `weight * #{i : x_0^i = symbol}`.
    LeafCount { symbol: Symbol, weight: f64 },
    /// `weight * #{i : x_level^i = symbol}`.
    LatentCount { level: usize, symbol: Symbol, weight: f64 },
}

impl Energy for EnergySpec {
    fn energy(&self, x: &TreeSample) -> f64 {
        let count = |level: usize, symbol: Symbol| x.level(level).iter().filter(|&&a| a == symbol).count() as f64;
        match *self {
            EnergySpec::Zero => 0.0,
            EnergySpec::LeafCount { symbol, weight } => weight * count(0, symbol),
            EnergySpec::LatentCount { level, symbol, weight } => weight * count(level, symbol),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UturnConfig {
    /// Leaves masked per step.
    pub k: usize,
    pub n_steps: usize,
    /// Record every `record_stride` steps (step 0 is always recorded).
    pub record_stride: usize,
    pub seed: u64,
    /// Keep full states in the trace, not only observer output.
    #[serde(default)]
    pub keep_states: bool,
}

impl UturnConfig {
    pub fn new(k: usize, n_steps: usize) -> Self {
        Self { k, n_steps, record_stride: 1, seed: 0, keep_states: false }
    }

    /// `k = round(rho * d)`, at least 1.
    pub fn k_from_rho(rho: f64, d: usize) -> Result<usize> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParams(format!("masking fraction {rho} outside (0, 1]")));
        }
        Ok(((rho * d as f64).round() as usize).clamp(1, d))
    }

    pub fn rho(&self, d: usize) -> f64 {
        self.k as f64 / d as f64
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k < 1 || self.k > d {
            return Err(Error::InvalidParams(format!("k = {} outside 1..={d}", self.k)));
        }
        if self.record_stride < 1 {
            return Err(Error::InvalidParams("record_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Receives the chain state at every recorded step.
pub trait Observer {
    fn observe(&mut self, step: usize, x: &TreeSample);
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainTrace {
    pub config: UturnConfig,
    /// Recorded step indices.
    pub steps: Vec<usize>,
    /// States at recorded steps, when `keep_states` is set.
    pub states: Vec<TreeSample>,
    /// Per-step acceptance, Metropolis chains only.
    pub accepted: Option<Vec<bool>>,
    pub last: TreeSample,
}

impl ChainTrace {
    /// Cumulative number of masked tokens `k * n` at each recorded step.
    pub fn cumulative_masks(&self) -> Vec<u64> {
        self.steps.iter().map(|&n| (n * self.config.k) as u64).collect()
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        self.accepted
            .as_ref()
            .map(|a| a.iter().filter(|&&x| x).count() as f64 / a.len().max(1) as f64)
    }
}

/// `k` distinct leaf positions, uniformly.
pub fn mask_positions<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, d, k).into_vec()
}

pub fn uturn_step<R: Rng + ?Sized>(grammar: &Grammar, x: &TreeSample, k: usize, rng: &mut R) -> TreeSample {
    let positions = mask_positions(grammar.leaf_count(), k, rng);
    let masked = MaskedLeaves::from_sentence(x.leaves(), &positions);
    posterior_sample(grammar, &masked, rng).expect("masking a valid sentence is always consistent")
}

/// Metropolis step with U-turn proposal; returns the new state and whether it was accepted.
///
/// The acceptance uniform is drawn on every step so the RNG advances the same
/// way whether or not the proposal is taken.
pub fn mh_step<R: Rng + ?Sized>(
    grammar: &Grammar,
    x: &TreeSample,
    k: usize,
    energy: &dyn Energy,
    rng: &mut R,
) -> (TreeSample, bool) {
    let proposal = uturn_step(grammar, x, k, rng);
    let delta = energy.energy(&proposal) - energy.energy(x);
    let u: f64 = rng.random();
    if u < (-delta).exp().min(1.0) {
        (proposal, true)
    } else {
        (x.clone(), false)
    }
}

fn iterate<R, F>(
    x0: &TreeSample,
    cfg: &UturnConfig,
    observers: &mut [&mut dyn Observer],
    rng: &mut R,
    mut step: F,
) -> (Vec<usize>, Vec<TreeSample>, TreeSample)
where
    R: Rng + ?Sized,
    F: FnMut(&TreeSample, &mut R) -> TreeSample,
{
    let mut steps = Vec::new();
    let mut states = Vec::new();
    let mut record = |n: usize, x: &TreeSample, observers: &mut [&mut dyn Observer]| {
        steps.push(n);
        if cfg.keep_states {
            states.push(x.clone());
        }
        for o in observers.iter_mut() {
            o.observe(n, x);
        }
    };
    record(0, x0, observers);
    let mut x = x0.clone();
    for n in 1..=cfg.n_steps {
        x = step(&x, rng);
        if n % cfg.record_stride == 0 {
            record(n, &x, observers);
        }
    }
    (steps, states, x)
}

pub fn run_chain<R: Rng + ?Sized>(
    grammar: &Grammar,
    x0: &TreeSample,
    cfg: &UturnConfig,
    observers: &mut [&mut dyn Observer],
    rng: &mut R,
) -> Result<ChainTrace> {
    cfg.validate(grammar.leaf_count())?;
    let (steps, states, last) = iterate(x0, cfg, observers, rng, |x, rng| uturn_step(grammar, x, cfg.k, rng));
    Ok(ChainTrace { config: cfg.clone(), steps, states, accepted: None, last })
}

pub fn run_mh_chain<R: Rng + ?Sized>(
    grammar: &Grammar,
    x0: &TreeSample,
    cfg: &UturnConfig,
    energy: &dyn Energy,
    observers: &mut [&mut dyn Observer],
    rng: &mut R,
) -> Result<ChainTrace> {
    cfg.validate(grammar.leaf_count())?;
    let mut accepted = Vec::with_capacity(cfg.n_steps);
    let (steps, states, last) = iterate(x0, cfg, observers, rng, |x, rng| {
        let (next, ok) = mh_step(grammar, x, cfg.k, energy, rng);
        accepted.push(ok);
        next
    });
    Ok(ChainTrace { config: cfg.clone(), steps, states, accepted: Some(accepted), last })
}

/// Default limit on the number of sentences for [`exact_kernel`].
pub const KERNEL_BUDGET: usize = 4096;

/// Transition matrix over the enumerated sentences; `matrix[to * n + from]`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub sentences: SentenceSet,
    pub k: usize,
    pub matrix: Vec<f64>,
}

impl TransitionKernel {
    pub fn n(&self) -> usize {
        self.sentences.len()
    }

    pub fn prob(&self, to: usize, from: usize) -> f64 {
        self.matrix[to * self.n() + from]
    }

    /// `max |U[x'][x] - U[x][x']|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                worst = worst.max((self.prob(a, b) - self.prob(b, a)).abs());
            }
        }
        worst
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|from| (0..n).map(|to| self.prob(to, from)).sum()).collect()
    }

    /// Communicating classes of the kernel (components of its support graph).
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut ds = DisjointSet::new(n);
        for to in 0..n {
            for from in 0..n {
                if self.prob(to, from) > 0.0 {
                    ds.union(to, from);
                }
            }
        }
        ds.labels()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `k`-subsets of `0..d` in lexicographic order.
fn subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let Some(i) = (0..k).rev().find(|&i| current[i] < d - k + i) else {
            return out;
        };
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// `U[x'][x]`: average over the `C(d, k)` mask patterns of the posterior
/// probability of `x'` given `x` masked at that pattern.
pub fn exact_kernel(grammar: &Grammar, k: usize, budget: usize) -> Result<TransitionKernel> {
    let d = grammar.leaf_count();
    if k < 1 || k > d {
        return Err(Error::InvalidParams(format!("k = {k} outside 1..={d}")));
    }
    let sentences = enumerate_sentences(grammar, budget)?;
    let n = sentences.len();
    let patterns = subsets(d, k);
    let work = (n * n) as f64 * binomial(d, k);
    if work > 1e10 {
        return Err(Error::BudgetExceeded { count: work, budget });
    }
    let weight = 1.0 / patterns.len() as f64;
    let mut matrix = vec![0.0; n * n];
    for from in 0..n {
        let x = sentences.tree(from);
        for pattern in &patterns {
            let masked = MaskedLeaves::from_sentence(x.leaves(), pattern);
            let messages = upward_pass(grammar, &masked)?;
            for to in 0..n {
                let target = sentences.tree(to);
                if masked.admits(target.leaves()) {
                    matrix[to * n + from] += weight * probability_from_messages(grammar, &masked, &messages, target);
                }
            }
        }
    }
    Ok(TransitionKernel { sentences, k, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::GrammarParams;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn grammar(v: usize, s: usize, depth: usize, m: usize, seed: u64) -> Grammar {
        Grammar::sample(&GrammarParams::new(v, s, depth, m, seed)).unwrap()
    }

    #[test]
    fn k_from_rho_rounds_and_clamps() {
        assert_eq!(UturnConfig::k_from_rho(1.0 / 64.0, 64).unwrap(), 1);
        assert_eq!(UturnConfig::k_from_rho(0.001, 64).unwrap(), 1);
        assert_eq!(UturnConfig::k_from_rho(0.137, 256).unwrap(), 35);
        assert!(UturnConfig::k_from_rho(0.0, 64).is_err());
        assert!(UturnConfig::k_from_rho(1.5, 64).is_err());
    }

    #[test]
    fn subsets_enumerate_all_patterns() {
        assert_eq!(subsets(4, 2).len(), 6);
        assert_eq!(subsets(5, 5), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(subsets(6, 1).len(), 6);
    }

    #[test]
    fn step_keeps_unmasked_leaves() {
        let g = grammar(6, 2, 4, 3, 2);
        let mut rng = SimRng::seed_from_u64(4);
        let mut x = g.generate(&mut rng);
        for _ in 0..200 {
            let y = uturn_step(&g, &x, 1, &mut rng);
            assert!(g.is_consistent(&y));
            let diff = x.leaves().iter().zip(y.leaves()).filter(|(a, b)| a != b).count();
            assert!(diff <= 1);
            x = y;
        }
    }

    #[test]
    fn single_rule_chain_is_frozen() {
        // Frozen as long as no two of the v sentences are one flip apart.
        let g = (0..)
            .map(|seed| grammar(4, 2, 3, 1, seed))
            .find(|g| crate::oracle::min_pairwise_hamming(&enumerate_sentences(g, 100).unwrap()) >= 2)
            .unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        let x0 = g.generate(&mut rng);
        let cfg = UturnConfig { keep_states: true, ..UturnConfig::new(1, 50) };
        let trace = run_chain(&g, &x0, &cfg, &mut [], &mut rng).unwrap();
        assert!(trace.states.iter().all(|x| *x == x0));
    }

    #[test]
    fn zero_steps_trace_holds_start() {
        let g = grammar(4, 2, 2, 2, 2);
        let mut rng = SimRng::seed_from_u64(0);
        let x0 = g.generate(&mut rng);
        let cfg = UturnConfig { keep_states: true, ..UturnConfig::new(2, 0) };
        let trace = run_chain(&g, &x0, &cfg, &mut [], &mut rng).unwrap();
        assert_eq!(trace.steps, vec![0]);
        assert_eq!(trace.states, vec![x0]);
        assert!(trace.accepted.is_none());
    }

    #[test]
    fn chains_are_deterministic_under_seed() {
        let g = grammar(8, 2, 4, 3, 2);
        let x0 = g.generate(&mut SimRng::seed_from_u64(1));
        let cfg = UturnConfig { keep_states: true, record_stride: 3, ..UturnConfig::new(2, 60) };
        let a = run_chain(&g, &x0, &cfg, &mut [], &mut SimRng::seed_from_u64(9)).unwrap();
        let b = run_chain(&g, &x0, &cfg, &mut [], &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.steps, (0..=60).step_by(3).collect::<Vec<_>>());
        assert_eq!(a.cumulative_masks()[1], 6);
    }

    #[test]
    fn zero_energy_always_accepts() {
        let g = grammar(4, 2, 3, 2, 2);
        let mut rng = SimRng::seed_from_u64(0);
        let x0 = g.generate(&mut rng);
        let trace = run_mh_chain(&g, &x0, &UturnConfig::new(2, 300), &EnergySpec::Zero, &mut [], &mut rng).unwrap();
        assert_eq!(trace.acceptance_rate(), Some(1.0));
    }

    #[test]
    fn uphill_moves_accepted_at_boltzmann_rate() {
        // Proposal is always a full resample; energy is +10 for anything but x0.
        let g = grammar(4, 2, 1, 2, 3);
        let mut rng = SimRng::seed_from_u64(11);
        let x0 = g.generate(&mut rng);
        let start = x0.clone();
        let energy = move |x: &TreeSample| if *x == start { 0.0 } else { 10.0 };
        let trials = 1_000_000;
        let (mut proposed_away, mut accepted_away) = (0u64, 0u64);
        for _ in 0..trials {
            let (y, ok) = mh_step(&g, &x0, 2, &energy, &mut rng);
            if ok && y != x0 {
                accepted_away += 1;
            }
            if !(ok && y == x0) {
                proposed_away += 1;
            }
        }
        // Proposals landing back on x0 are always accepted; the rest at e^-10.
        let p = (-10.0f64).exp();
        let expected = proposed_away as f64 * p;
        let sigma = (proposed_away as f64 * p * (1.0 - p)).sqrt();
        assert!((accepted_away as f64 - expected).abs() <= 4.0 * sigma, "{accepted_away} vs {expected}");
    }

    #[test]
    fn energies_count_symbols() {
        let x = TreeSample { levels: vec![vec![0, 1, 1, 2], vec![1, 1], vec![0]] };
        assert_eq!(EnergySpec::LeafCount { symbol: 1, weight: 0.5 }.energy(&x), 1.0);
        assert_eq!(EnergySpec::LatentCount { level: 1, symbol: 1, weight: 2.0 }.energy(&x), 4.0);
        assert_eq!(EnergySpec::Zero.energy(&x), 0.0);
        let json = serde_json::to_string(&EnergySpec::LeafCount { symbol: 3, weight: 1.0 }).unwrap();
        assert_eq!(json, r#"{"kind":"leaf_count","symbol":3,"weight":1.0}"#);
    }

    #[test]
    fn full_mask_kernel_is_uniform() {
        let g = grammar(4, 2, 2, 2, 1);
        let kernel = exact_kernel(&g, 4, KERNEL_BUDGET).unwrap();
        assert!(kernel.matrix.iter().all(|p| (p - 1.0 / 32.0).abs() < 1e-12));
    }

    #[test]
    fn kernel_refuses_large_instances() {
        let g = grammar(8, 2, 3, 4, 1);
        assert!(matches!(exact_kernel(&g, 1, KERNEL_BUDGET), Err(Error::BudgetExceeded { .. })));
    }
}
