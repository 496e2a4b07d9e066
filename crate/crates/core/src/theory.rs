//! Branching-process predictions for the percolation and layer-inversion thresholds.
//!
//! Finite mode works at given `(v, s, L)` through the admissible-count
//! recursion; asymptotic mode is the `v, L → ∞` closed form at fixed density.
//! Densities are treated as continuous: `m = f v^(s-1)` may be fractional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Finite,
    Asymptotic,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite" => Ok(Mode::Finite),
            "asymptotic" => Ok(Mode::Asymptotic),
            other => Err(Error::InvalidParams(format!("unknown mode {other:?}"))),
        }
    }
}

/// `N̄_ℓ` for `ℓ = 0..=L` (index = level), from `N̄_L = v` downward.
pub fn admissible_counts(v: f64, s: usize, depth: usize, m: f64) -> Vec<f64> {
    let tuples = v.powi(s as i32);
    let mut counts = vec![0.0; depth + 1];
    counts[depth] = v;
    for level in (1..=depth).rev() {
        counts[level - 1] = 1.0 + (v - 1.0) * (m * counts[level] - 1.0) / (tuples - 1.0);
    }
    counts
}

/// `Π_{r=from+1}^{to} (1 - 1/N̄_r)`, the chance a change at `from` reaches `to`.
pub fn cascade_probability(counts: &[f64], from: usize, to: usize) -> f64 {
    counts[from + 1..=to].iter().map(|n| 1.0 - 1.0 / n).product()
}

/// Summands `ℓ = 1..=L` of the finite-size number of newly opened flips.
pub fn branching_terms(counts: &[f64], v: f64, s: usize) -> Vec<f64> {
    let depth = counts.len() - 1;
    let opened = counts[0] - 1.0;
    (1..=depth)
        .map(|level| {
            let sites = (s as f64).powi(level as i32) - (s as f64).powi(level as i32 - 1);
            let reach = cascade_probability(counts, 0, level - 1);
            let newly_enabled = 1.0 - (counts[level - 1] - 1.0) / (v - 1.0);
            sites * opened * reach * reach * newly_enabled
        })
        .collect()
}

/// `n_{v,L}(f)`.
pub fn branching_finite(f: f64, v: f64, s: usize, depth: usize) -> f64 {
    let m = f * v.powi(s as i32 - 1);
    branching_terms(&admissible_counts(v, s, depth, m), v, s).iter().sum()
}

/// `n(f) = f (s-1) / ((1 - s f²)(1 - f))`, valid for `0 < f < min(1, 1/√s)`.
pub fn branching_asymptotic(f: f64, s: usize) -> Result<f64> {
    let sf = s as f64;
    if !(f > 0.0 && f < 1.0 && sf * f * f < 1.0) {
        return Err(Error::Domain(format!("n(f) needs 0 < f < 1/sqrt(s); got f = {f}, s = {s}")));
    }
    Ok(f * (sf - 1.0) / ((1.0 - sf * f * f) * (1.0 - f)))
}

/// `s (1 - 1/N̄_1(f)) - 1`; zero at the finite-size inversion threshold.
pub fn inversion_residual(f: f64, v: f64, s: usize, depth: usize) -> f64 {
    let counts = admissible_counts(v, s, depth, f * v.powi(s as i32 - 1));
    s as f64 * cascade_probability(&counts, 0, 1) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootSolution {
    pub root: f64,
    /// Function value at `root`.
    pub residual: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
}

pub const ROOT_TOLERANCE: f64 = 1e-9;
const SCAN_POINTS: usize = 4096;
const MAX_BISECTIONS: usize = 200;

/// Bisection on a sign-changing bracket, run until the bracket collapses to
/// float resolution.
pub fn bisect<F: Fn(f64) -> f64>(g: F, lo: f64, hi: f64) -> Result<RootSolution> {
    let (mut a, mut b) = (lo, hi);
    let (mut ga, gb) = (g(a), g(b));
    if ga == 0.0 {
        return Ok(RootSolution { root: a, residual: 0.0, bracket: (lo, hi), iterations: 0 });
    }
    if gb == 0.0 {
        return Ok(RootSolution { root: b, residual: 0.0, bracket: (lo, hi), iterations: 0 });
    }
    if ga.signum() == gb.signum() {
        return Err(Error::NoBracket { lo, hi });
    }
    let mut iterations = 0;
    while iterations < MAX_BISECTIONS {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = g(mid);
        iterations += 1;
        if gm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    let (ra, rb) = (g(a), g(b));
    let (root, residual) = if ra.abs() <= rb.abs() { (a, ra) } else { (b, rb) };
    Ok(RootSolution { root, residual, bracket: (lo, hi), iterations })
}

/// Scan `[lo, hi]` on a uniform grid for the first sign change of `g`, then bisect.
pub fn first_root<F: Fn(f64) -> f64>(g: F, lo: f64, hi: f64) -> Result<RootSolution> {
    let mut prev_x = lo;
    let mut prev = g(lo);
    for i in 1..=SCAN_POINTS {
        let x = lo + (hi - lo) * i as f64 / SCAN_POINTS as f64;
        let gx = g(x);
        if prev == 0.0 || prev.signum() != gx.signum() {
            let mut sol = bisect(&g, prev_x, x)?;
            sol.bracket = (prev_x, x);
            return Ok(sol);
        }
        prev_x = x;
        prev = gx;
    }
    Err(Error::NoBracket { lo, hi })
}

fn asymptotic_upper(s: usize) -> f64 {
    // Just inside the pole at 1/√s.
    (1.0 / (s as f64).sqrt()).min(1.0) * (1.0 - 1e-12)
}

fn finite_range(v: usize, s: usize) -> (f64, f64) {
    (1.0 / (v as f64).powi(s as i32 - 1), 1.0)
}

fn check_finite(v: usize, s: usize, depth: usize) -> Result<()> {
    if v < 2 || s < 2 || depth < 1 {
        return Err(Error::InvalidParams(format!("need v, s ≥ 2 and L ≥ 1; got v={v}, s={s}, L={depth}")));
    }
    Ok(())
}

/// Percolation threshold: the smallest `f` with `n(f) = 1`.
pub fn solve_f_per(mode: Mode, v: usize, s: usize, depth: usize) -> Result<RootSolution> {
    match mode {
        Mode::Asymptotic => {
            if s < 2 {
                return Err(Error::InvalidParams("s must be at least 2".into()));
            }
            first_root(|f| branching_asymptotic(f, s).map_or(f64::INFINITY, |n| n - 1.0), 1e-12, asymptotic_upper(s))
        }
        Mode::Finite => {
            check_finite(v, s, depth)?;
            let (lo, hi) = finite_range(v, s);
            first_root(|f| branching_finite(f, v as f64, s, depth) - 1.0, lo, hi)
        }
    }
}

/// Layer-inversion threshold: `s f = 1` asymptotically, `s (1 - 1/N̄_1) = 1` at finite size.
pub fn solve_f_inv(mode: Mode, v: usize, s: usize, depth: usize) -> Result<RootSolution> {
    match mode {
        Mode::Asymptotic => {
            if s < 2 {
                return Err(Error::InvalidParams("s must be at least 2".into()));
            }
            let root = 1.0 / s as f64;
            Ok(RootSolution { root, residual: s as f64 * root - 1.0, bracket: (root, root), iterations: 0 })
        }
        Mode::Finite => {
            check_finite(v, s, depth)?;
            let (lo, hi) = finite_range(v, s);
            first_root(|f| inversion_residual(f, v as f64, s, depth), lo, hi)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub f: f64,
    /// `n(f)`, absent outside the asymptotic domain.
    pub branching: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub mode: Mode,
    /// `None` stands for the `v → ∞` limit.
    pub v: Option<usize>,
    pub s: usize,
    /// `None` stands for the `L → ∞` limit.
    pub depth: Option<usize>,
    pub grid: Vec<GridPoint>,
    pub f_per: Option<RootSolution>,
    pub f_per_error: Option<String>,
    pub f_inv: Option<RootSolution>,
    pub f_inv_error: Option<String>,
    /// `N̄_ℓ` by level at `f_per` (finite mode).
    pub counts_at_f_per: Option<Vec<f64>>,
    /// `p_cascade_{0→ℓ}` by level at `f_per` (finite mode).
    pub cascade_at_f_per: Option<Vec<f64>>,
}

pub fn threshold_report(mode: Mode, v: usize, s: usize, depth: usize, f_grid: &[f64]) -> ThresholdReport {
    let grid = f_grid
        .iter()
        .map(|&f| GridPoint {
            f,
            branching: match mode {
                Mode::Asymptotic => branching_asymptotic(f, s).ok(),
                Mode::Finite => {
                    let (lo, hi) = finite_range(v, s);
                    (f >= lo && f <= hi).then(|| branching_finite(f, v as f64, s, depth))
                }
            },
        })
        .collect();
    let (f_per, f_per_error) = split(solve_f_per(mode, v, s, depth));
    let (f_inv, f_inv_error) = split(solve_f_inv(mode, v, s, depth));
    let (counts_at_f_per, cascade_at_f_per) = match (mode, &f_per) {
        (Mode::Finite, Some(sol)) => {
            let counts = admissible_counts(v as f64, s, depth, sol.root * (v as f64).powi(s as i32 - 1));
            let cascade = (0..=depth).map(|l| cascade_probability(&counts, 0, l)).collect();
            (Some(counts), Some(cascade))
        }
        _ => (None, None),
    };
    let finite = mode == Mode::Finite;
    ThresholdReport {
        mode,
        v: finite.then_some(v),
        s,
        depth: finite.then_some(depth),
        grid,
        f_per,
        f_per_error,
        f_inv,
        f_inv_error,
        counts_at_f_per,
        cascade_at_f_per,
    }
}

fn split(r: Result<RootSolution>) -> (Option<RootSolution>, Option<String>) {
    match r {
        Ok(sol) => (Some(sol), None),
        Err(e) => (None, Some(e.to_string())),
    }
}
