//! Layer-wise overlaps, ergodic baselines, plateaus and relaxation times.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::Observer;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarParams, TreeSample};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Fraction of level-`level` sites where `a` and `b` agree.
pub fn layer_overlap(a: &TreeSample, b: &TreeSample, level: usize) -> Result<f64> {
    let depth = a.depth();
    if level > depth || b.depth() != depth {
        return Err(Error::LevelOutOfRange { level, depth });
    }
    let (xa, xb) = (a.level(level), b.level(level));
    if xa.len() != xb.len() {
        return Err(Error::ShapeMismatch { expected: xa.len(), found: xb.len() });
    }
    let same = xa.iter().zip(xb).filter(|(p, q)| p == q).count();
    Ok(same as f64 / xa.len() as f64)
}

/// Rule-averaged overlap between two independent samples at `level`.
///
/// Going down one level, equal parents give equal children with probability
/// `1/m + (1 - 1/m) r` and distinct parents with probability `r`, where `r` is
/// the chance that two distinct random `s`-tuples agree at a fixed slot.
/// `m` may be fractional when scanning densities continuously.
pub fn ergodic_baseline(v: usize, s: usize, depth: usize, m: f64, level: usize) -> f64 {
    let vf = v as f64;
    if level == depth {
        return 1.0 / vf;
    }
    let r = (vf.powi(s as i32 - 1) - 1.0) / (vf.powi(s as i32) - 1.0);
    let a = (1.0 - r) / m;
    let fixed = r / (1.0 - a);
    let decay = a.powi((depth - level) as i32);
    (1.0 / vf) * (fixed + (1.0 - fixed) * decay) + (1.0 - 1.0 / vf) * fixed * (1.0 - decay)
}

pub fn ergodic_baselines(params: &GrammarParams) -> Vec<f64> {
    (0..=params.depth)
        .map(|l| ergodic_baseline(params.v, params.s, params.depth, params.m as f64, l))
        .collect()
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.carry += other.carry;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineStats {
    /// Analytic `μ̄_ℓ`, by level.
    pub analytic: Vec<f64>,
    /// Monte Carlo mean overlap of independent pairs, by level.
    pub mean: Vec<f64>,
    /// Standard deviation of a single pair's overlap, by level.
    pub std: Vec<f64>,
    /// Standard error of `mean`.
    pub stderr: Vec<f64>,
    pub n_pairs: usize,
    pub n_grammars: usize,
}

impl BaselineStats {
    /// Largest `|mean - analytic| / stderr` across levels.
    pub fn max_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.analytic)
            .zip(&self.stderr)
            .map(|((m, a), e)| if *e > 0.0 { (m - a).abs() / e } else if m == a { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

pub const MIN_PAIRS: usize = 1000;

fn pair_moments<R: Rng + ?Sized>(grammar: &Grammar, n_pairs: usize, rng: &mut R) -> Vec<(CompensatedSum, CompensatedSum)> {
    let levels = grammar.depth() + 1;
    let mut acc = vec![(CompensatedSum::default(), CompensatedSum::default()); levels];
    for _ in 0..n_pairs {
        let a = grammar.generate(rng);
        let b = grammar.generate(rng);
        for (level, (s1, s2)) in acc.iter_mut().enumerate() {
            let q = layer_overlap(&a, &b, level).expect("same grammar");
            s1.add(q);
            s2.add(q * q);
        }
    }
    acc
}

/// Overlap statistics of independent pairs drawn from one grammar.
pub fn independent_pair_stats<R: Rng + ?Sized>(grammar: &Grammar, n_pairs: usize, rng: &mut R) -> Result<BaselineStats> {
    if n_pairs < MIN_PAIRS {
        return Err(Error::InvalidParams(format!("need at least {MIN_PAIRS} pairs, got {n_pairs}")));
    }
    let n = n_pairs as f64;
    let mut out = BaselineStats {
        analytic: ergodic_baselines(grammar.params()),
        mean: Vec::new(),
        std: Vec::new(),
        stderr: Vec::new(),
        n_pairs,
        n_grammars: 1,
    };
    for (s1, s2) in pair_moments(grammar, n_pairs, rng) {
        let mean = s1.value() / n;
        let var = ((s2.value() / n - mean * mean) * n / (n - 1.0)).max(0.0);
        out.mean.push(mean);
        out.std.push(var.sqrt());
        out.stderr.push((var / n).sqrt());
    }
    Ok(out)
}

/// Pair statistics averaged over `n_grammars` independent rule draws, which is
/// what the analytic baseline describes. The standard error is computed from
/// the spread of per-grammar means, so grammar-to-grammar variation is included.
pub fn rule_averaged_pair_stats(
    params: &GrammarParams,
    n_grammars: usize,
    pairs_per_grammar: usize,
    master_seed: u64,
) -> Result<BaselineStats> {
    if n_grammars < 2 || n_grammars * pairs_per_grammar < MIN_PAIRS {
        return Err(Error::InvalidParams(format!(
            "need at least 2 grammars and {MIN_PAIRS} pairs in total"
        )));
    }
    let levels = params.depth + 1;
    let mut grammar_means = vec![Vec::with_capacity(n_grammars); levels];
    let mut pooled = vec![(CompensatedSum::default(), CompensatedSum::default()); levels];
    for i in 0..n_grammars {
        let p = GrammarParams { seed: derive_seed(master_seed, Stream::Grammar, &[i as u64]), ..params.clone() };
        let grammar = Grammar::sample(&p)?;
        let mut rng = stream_rng(master_seed, Stream::Pairs, &[i as u64]);
        for (level, (s1, s2)) in pair_moments(&grammar, pairs_per_grammar, &mut rng).into_iter().enumerate() {
            grammar_means[level].push(s1.value() / pairs_per_grammar as f64);
            pooled[level].0.add(s1.value());
            pooled[level].1.add(s2.value());
        }
    }
    let total = (n_grammars * pairs_per_grammar) as f64;
    let g = n_grammars as f64;
    let mut out = BaselineStats {
        analytic: ergodic_baselines(params),
        mean: Vec::new(),
        std: Vec::new(),
        stderr: Vec::new(),
        n_pairs: n_grammars * pairs_per_grammar,
        n_grammars,
    };
    for level in 0..levels {
        let mean = pooled[level].0.value() / total;
        let var = (pooled[level].1.value() / total - mean * mean).max(0.0) * total / (total - 1.0);
        let between = grammar_means[level].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (g - 1.0);
        out.mean.push(mean);
        out.std.push(var.sqrt());
        out.stderr.push((between / g).sqrt());
    }
    Ok(out)
}

/// Records per-level overlap with the starting state along one chain.
#[derive(Debug, Clone)]
pub struct OverlapRecorder {
    x0: TreeSample,
    pub steps: Vec<usize>,
    /// `values[ℓ][point]`.
    pub values: Vec<Vec<f64>>,
}

impl OverlapRecorder {
    pub fn new(x0: TreeSample) -> Self {
        let levels = x0.depth() + 1;
        Self { x0, steps: Vec::new(), values: vec![Vec::new(); levels] }
    }
}

impl Observer for OverlapRecorder {
    fn observe(&mut self, step: usize, x: &TreeSample) {
        self.steps.push(step);
        for (level, series) in self.values.iter_mut().enumerate() {
            series.push(layer_overlap(&self.x0, x, level).expect("same grammar"));
        }
    }
}

/// Chain-averaged overlap curves for all levels.
#[derive(Debug, Clone)]
pub struct CurveAccumulator {
    steps: Vec<usize>,
    sums: Vec<Vec<CompensatedSum>>,
    squares: Vec<Vec<CompensatedSum>>,
    n_chains: usize,
}

impl CurveAccumulator {
    pub fn new(steps: Vec<usize>, levels: usize) -> Self {
        let n = steps.len();
        Self {
            steps,
            sums: vec![vec![CompensatedSum::default(); n]; levels],
            squares: vec![vec![CompensatedSum::default(); n]; levels],
            n_chains: 0,
        }
    }

    pub fn add(&mut self, values: &[Vec<f64>]) {
        for (level, series) in values.iter().enumerate() {
            for (i, &q) in series.iter().enumerate() {
                self.sums[level][i].add(q);
                self.squares[level][i].add(q * q);
            }
        }
        self.n_chains += 1;
    }

    pub fn add_recorder(&mut self, rec: &OverlapRecorder) {
        assert_eq!(rec.steps, self.steps, "chains must share the recording schedule");
        self.add(&rec.values);
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    /// Fold in another accumulator over the same schedule.
    pub fn merge(&mut self, other: &CurveAccumulator) {
        assert_eq!(self.steps, other.steps, "accumulators must share the recording schedule");
        for (mine, theirs) in self.sums.iter_mut().chain(self.squares.iter_mut()).zip(other.sums.iter().chain(&other.squares)) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        self.n_chains += other.n_chains;
    }

    /// Raw (unnormalized) curves; `k` is the number of masks per step.
    pub fn curves(&self, k: usize) -> Vec<CorrelationCurve> {
        let n = self.n_chains as f64;
        (0..self.sums.len())
            .map(|level| {
                let raw: Vec<f64> = self.sums[level].iter().map(|s| s.value() / n).collect();
                let stderr = self.squares[level]
                    .iter()
                    .zip(&raw)
                    .map(|(sq, mean)| {
                        if self.n_chains < 2 {
                            return 0.0;
                        }
                        let var = ((sq.value() / n - mean * mean) * n / (n - 1.0)).max(0.0);
                        (var / n).sqrt()
                    })
                    .collect();
                CorrelationCurve::from_raw(level, self.steps.clone(), k, raw, stderr, self.n_chains)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub level: usize,
    pub steps: Vec<usize>,
    pub cumulative_masks: Vec<u64>,
    /// `C_ℓ(n)`.
    pub raw: Vec<f64>,
    /// Standard error of `raw` across chains.
    pub stderr: Vec<f64>,
    /// `μ̄_ℓ`; NaN until normalized.
    pub baseline: f64,
    /// `C̃_ℓ(n)`; empty until normalized.
    pub normalized: Vec<f64>,
    pub n_chains: usize,
}

impl CorrelationCurve {
    pub fn from_raw(level: usize, steps: Vec<usize>, k: usize, raw: Vec<f64>, stderr: Vec<f64>, n_chains: usize) -> Self {
        let cumulative_masks = steps.iter().map(|&n| (n * k) as u64).collect();
        Self { level, steps, cumulative_masks, raw, stderr, baseline: f64::NAN, normalized: Vec::new(), n_chains }
    }

    /// Build a curve directly from normalized values (baseline 0).
    pub fn from_normalized(level: usize, steps: Vec<usize>, k: usize, values: Vec<f64>) -> Self {
        let stderr = vec![0.0; values.len()];
        let mut c = Self::from_raw(level, steps, k, values.clone(), stderr, 1);
        c.baseline = 0.0;
        c.normalized = values;
        c
    }

    fn points_until(&self, n_max: usize) -> usize {
        self.steps.partition_point(|&n| n <= n_max)
    }
}

/// `C̃ = (C - μ̄) / (1 - μ̄)` pointwise.
pub fn normalized_curve(mut curve: CorrelationCurve, baseline: f64) -> Result<CorrelationCurve> {
    if baseline >= 1.0 {
        return Err(Error::DegenerateBaseline);
    }
    curve.baseline = baseline;
    curve.normalized = curve.raw.iter().map(|c| (c - baseline) / (1.0 - baseline)).collect();
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Mean of `C̃` over the trailing window.
    pub value: f64,
    /// Standard error from the scatter of window points.
    pub stderr: f64,
    pub n_points: usize,
}

impl Plateau {
    /// Plateau expressed in units of `unit_std`, a standard deviation on the raw overlap scale.
    pub fn over_std(&self, baseline: f64, unit_std: f64) -> f64 {
        self.value * (1.0 - baseline) / unit_std
    }
}

pub const DEFAULT_WINDOW: f64 = 0.1;

/// Average of `C̃_ℓ` over the last `window_fraction` of recorded points with `n ≤ n_max`.
pub fn plateau(curve: &CorrelationCurve, n_max: usize, window_fraction: f64) -> Result<Plateau> {
    let end = curve.points_until(n_max).min(curve.normalized.len());
    let width = ((end as f64 * window_fraction).ceil() as usize).min(end);
    if width < 3 {
        return Err(Error::TooFewPoints { needed: 3, found: width });
    }
    let window = &curve.normalized[end - width..end];
    let w = width as f64;
    let value = window.iter().sum::<f64>() / w;
    let var = window.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (w - 1.0);
    Ok(Plateau { value, stderr: (var / w).sqrt(), n_points: width })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "tau", rename_all = "snake_case")]
pub enum Relaxation {
    /// Relaxation time in steps.
    Relaxed(f64),
    NotRelaxed,
}

impl Relaxation {
    pub fn tau(&self) -> Option<f64> {
        match self {
            Relaxation::Relaxed(t) => Some(*t),
            Relaxation::NotRelaxed => None,
        }
    }

    /// On the cumulative-mask axis `k * n`.
    pub fn in_masks(&self, k: usize) -> Relaxation {
        match self {
            Relaxation::Relaxed(t) => Relaxation::Relaxed(t * k as f64),
            Relaxation::NotRelaxed => Relaxation::NotRelaxed,
        }
    }
}

/// Decaying part `D(n) = (C̃(n) - p) / (1 - p)` up to `n_max`; `None` when the plateau is at 1.
fn decaying_part(curve: &CorrelationCurve, n_max: usize, window_fraction: f64) -> Result<Option<(Vec<f64>, usize)>> {
    let p = plateau(curve, n_max, window_fraction)?.value;
    if 1.0 - p <= 1e-12 {
        return Ok(None);
    }
    let end = curve.points_until(n_max).min(curve.normalized.len());
    let decay = curve.normalized[..end].iter().map(|c| (c - p) / (1.0 - p)).collect();
    Ok(Some((decay, end)))
}

/// First interpolated `n` at which the plateau-subtracted curve drops to `1/e`.
pub fn relaxation_time(curve: &CorrelationCurve, n_max: usize, window_fraction: f64) -> Result<Relaxation> {
    let Some((decay, _)) = decaying_part(curve, n_max, window_fraction)? else {
        return Ok(Relaxation::NotRelaxed);
    };
    let target = (-1.0f64).exp();
    match decay.iter().position(|&x| x <= target) {
        None | Some(0) => Ok(Relaxation::NotRelaxed),
        Some(i) => {
            let (d0, d1) = (decay[i - 1], decay[i]);
            let (n0, n1) = (curve.steps[i - 1] as f64, curve.steps[i] as f64);
            Ok(Relaxation::Relaxed(n0 + (d0 - target) / (d0 - d1) * (n1 - n0)))
        }
    }
}

/// Alternative estimate: least-squares slope of `ln D(n) = -n / τ` through the
/// origin, using points before `D` first drops below `e^{-2}`.
pub fn relaxation_time_fit(curve: &CorrelationCurve, n_max: usize, window_fraction: f64) -> Result<Relaxation> {
    let Some((decay, _)) = decaying_part(curve, n_max, window_fraction)? else {
        return Ok(Relaxation::NotRelaxed);
    };
    let cutoff = (-2.0f64).exp();
    let (mut nn, mut nl) = (0.0, 0.0);
    for (&n, &d) in curve.steps.iter().zip(&decay).skip(1) {
        if d <= cutoff {
            break;
        }
        let n = n as f64;
        nn += n * n;
        nl += n * d.ln();
    }
    if nl >= 0.0 || !decay.iter().any(|&d| d <= (-1.0f64).exp()) {
        return Ok(Relaxation::NotRelaxed);
    }
    Ok(Relaxation::Relaxed(-nn / nl))
}

/// Kendall-style ordering score of relaxation times across levels:
/// `Σ_{i<j} sign(τ_j - τ_i)`. Positive means higher levels relax more slowly.
/// `None` unless every level relaxed.
pub fn ordering_score(taus: &[Relaxation]) -> Option<i64> {
    let values: Option<Vec<f64>> = taus.iter().map(|t| t.tau()).collect();
    let values = values?;
    let mut score = 0i64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            score += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    Some(score)
}
