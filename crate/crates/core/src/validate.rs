//! Built-in self-check suite: detailed balance, BP against brute force,
//! ergodic baselines and asymptotic thresholds on small reference instances.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::exact_kernel;
use crate::error::Result;
use crate::grammar::{Grammar, GrammarParams};
use crate::inference::{posterior_marginals, MaskedLeaves};
use crate::observables::{ergodic_baseline, rule_averaged_pair_stats};
use crate::oracle::{enumerate_sentences, posterior_brute};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::theory::{solve_f_inv, solve_f_per, Mode};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured deviation.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub seed: u64,
    pub bp_cases: usize,
    pub baseline_grammars: usize,
    pub baseline_pairs: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { seed: 0, bp_cases: 40, baseline_grammars: 20, baseline_pairs: 500 }
    }
}

fn check(name: &str, value: f64, tolerance: f64, detail: String) -> Check {
    Check { name: name.to_string(), passed: value <= tolerance, value, tolerance, detail }
}

/// Reference instance: `v = 4, s = 2, L = 2, m = 2` (32 sentences).
pub fn reference_params(seed: u64) -> GrammarParams {
    GrammarParams::new(4, 2, 2, 2, seed)
}

pub fn detailed_balance(seed: u64) -> Result<Vec<Check>> {
    let g = Grammar::sample(&reference_params(seed))?;
    let mut out = Vec::new();
    for k in [1, 2, 4] {
        let kernel = exact_kernel(&g, k, 64)?;
        let asym = kernel.max_asymmetry();
        let cols = kernel.column_sums().iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
        out.push(check(
            &format!("detailed_balance_k{k}"),
            asym.max(cols),
            1e-12,
            format!("{}x{} kernel, max asymmetry {asym:.2e}, max column-sum error {cols:.2e}", kernel.n(), kernel.n()),
        ));
    }
    Ok(out)
}

/// BP marginals against enumeration on random masks of random sentences.
pub fn bp_exactness(seed: u64, cases: usize) -> Result<Check> {
    let shapes = [(4, 2, 2, 2), (3, 3, 2, 2), (4, 2, 3, 2), (8, 2, 2, 3)];
    let mut rng = stream_rng(seed, Stream::Validate, &[1]);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (v, s, depth, m) = shapes[case % shapes.len()];
        let gseed = derive_seed(seed, Stream::Grammar, &[case as u64]);
        let g = Grammar::sample(&GrammarParams::new(v, s, depth, m, gseed))?;
        let set = enumerate_sentences(&g, 100_000)?;
        let x = g.generate(&mut rng);
        let d = g.leaf_count();
        let k = rng.random_range(0..=d);
        let positions = index::sample(&mut rng, d, k).into_vec();
        let masked = MaskedLeaves::from_sentence(x.leaves(), &positions);
        let bp = posterior_marginals(&g, &masked)?;
        let brute = posterior_brute(&set, &masked)?;
        worst = worst.max(bp.max_abs_diff(&brute.marginals));
    }
    Ok(check("bp_vs_brute_force", worst, 1e-10, format!("{cases} random (grammar, mask) cases")))
}

pub fn baselines(seed: u64, n_grammars: usize, pairs_per_grammar: usize) -> Result<Vec<Check>> {
    let params = GrammarParams::new(8, 2, 3, 3, 0);
    let stats = rule_averaged_pair_stats(&params, n_grammars, pairs_per_grammar, seed)?;
    let top = (ergodic_baseline(8, 2, 3, 3.0, 3) - 1.0 / 8.0).abs();
    Ok(vec![
        check("baseline_root_is_uniform", top, 0.0, "mu_L = 1/v".into()),
        check("baseline_vs_pairs", stats.max_z(), 4.0, format!("max z over levels, {} pairs", stats.n_pairs)),
    ])
}

pub fn thresholds() -> Result<Vec<Check>> {
    let per = solve_f_per(Mode::Asymptotic, 0, 2, 0)?.root;
    let inv = solve_f_inv(Mode::Asymptotic, 0, 2, 0)?.root;
    Ok(vec![
        check("f_per_asymptotic_s2", (per - 0.40303).abs(), 1e-3, format!("f_per = {per:.6}")),
        check("f_inv_asymptotic_s2", (inv - 0.5).abs(), 1e-9, format!("f_inv = {inv:.9}")),
    ])
}

pub fn run(options: &ValidationOptions) -> Result<ValidationReport> {
    let mut checks = detailed_balance(options.seed)?;
    checks.push(bp_exactness(options.seed, options.bp_cases)?);
    checks.extend(baselines(options.seed, options.baseline_grammars, options.baseline_pairs)?);
    checks.extend(thresholds()?);
    Ok(ValidationReport { seed: options.seed, checks })
}
