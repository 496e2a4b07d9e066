//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each and exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance [name-filter]`

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use uturn_core::chain::{exact_kernel, uturn_step, EnergySpec};
use uturn_core::harness::sweep::CutoffSummary;
use uturn_core::harness::{mh_histogram, run_sweep, write_sweep, ExperimentConfig, SweepResult};
use uturn_core::inference::{posterior_marginals, MaskedLeaves};
use uturn_core::observables::{ergodic_baseline, layer_overlap, rule_averaged_pair_stats};
use uturn_core::oracle::{build_flip_graph, enumerate_sentences, exact_component_plateau, posterior_brute, SentenceSet};
use uturn_core::rng::{derive_seed, stream_rng, Stream};
use uturn_core::theory::{solve_f_inv, solve_f_per, Mode};
use uturn_core::{Grammar, GrammarParams, Relaxation};

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn grammar(v: usize, s: usize, depth: usize, m: usize, seed: u64) -> Grammar {
    Grammar::sample(&GrammarParams::new(v, s, depth, m, seed)).expect("valid parameters")
}

fn hamming(a: &[u16], b: &[u16]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    (k - 1..d)
        .flat_map(|last| {
            subsets(last, k - 1).into_iter().map(move |mut s| {
                s.push(last);
                s
            })
        })
        .collect()
}

/// `U[to][from]` by enumeration: average over mask patterns of the uniform law
/// on sentences agreeing with `from` off the mask.
fn brute_kernel(set: &SentenceSet, k: usize) -> Vec<Vec<f64>> {
    let n = set.len();
    let d = set.tree(0).leaves().len();
    let patterns = subsets(d, k);
    let mut u = vec![vec![0.0; n]; n];
    for from in 0..n {
        let x = set.tree(from).leaves();
        for pattern in &patterns {
            let agree: Vec<usize> = (0..n)
                .filter(|&j| {
                    let y = set.tree(j).leaves();
                    (0..d).all(|i| pattern.contains(&i) || x[i] == y[i])
                })
                .collect();
            for &to in &agree {
                u[to][from] += 1.0 / (patterns.len() * agree.len()) as f64;
            }
        }
    }
    u
}

fn detailed_balance() -> Outcome {
    let g = grammar(4, 2, 2, 2, 0);
    let set = enumerate_sentences(&g, 64).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in [1, 2, 4] {
        let kernel = exact_kernel(&g, k, 64).map_err(|e| e.to_string())?;
        if kernel.n() != 32 {
            return Err(format!("kernel is {0}x{0}, expected 32x32", kernel.n()));
        }
        let asym = kernel.max_asymmetry();
        let cols = kernel.column_sums().iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
        let brute = brute_kernel(&set, k);
        let mut vs_brute: f64 = 0.0;
        for to in 0..32 {
            for from in 0..32 {
                vs_brute = vs_brute.max((kernel.prob(to, from) - brute[to][from]).abs());
            }
        }
        worst = worst.max(asym).max(cols).max(vs_brute);
        parts.push(format!("k={k}: asym {asym:.1e}, colsum {cols:.1e}, vs enumeration {vs_brute:.1e}"));
    }
    verdict(worst <= 1e-12, format!("{} (tol 1e-12)", parts.join("; ")))
}

fn bp_exactness() -> Outcome {
    let shapes = [
        (4, 2, 2, 2),
        (4, 2, 3, 2),
        (8, 2, 3, 2),
        (3, 3, 2, 3),
        (5, 2, 3, 3),
        (16, 2, 2, 4),
        (4, 3, 2, 2),
        (6, 2, 3, 4),
    ];
    let cases = 128;
    let mut rng = stream_rng(11, Stream::Validate, &[0]);
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for case in 0..cases {
        let (v, s, depth, m) = shapes[case % shapes.len()];
        let g = grammar(v, s, depth, m, derive_seed(11, Stream::Grammar, &[case as u64]));
        let set = enumerate_sentences(&g, 100_000).map_err(|e| e.to_string())?;
        largest = largest.max(set.len());
        let x = g.generate(&mut rng);
        let d = g.leaf_count();
        let k = rng.random_range(0..=d);
        let masked = MaskedLeaves::from_sentence(x.leaves(), &index::sample(&mut rng, d, k).into_vec());
        let bp = posterior_marginals(&g, &masked).map_err(|e| e.to_string())?;
        let brute = posterior_brute(&set, &masked).map_err(|e| e.to_string())?;
        worst = worst.max(bp.max_abs_diff(&brute.marginals));
    }
    verdict(worst <= 1e-10, format!("{cases} cases, up to {largest} sentences, max |diff| {worst:.1e} (tol 1e-10)"))
}

fn ergodic_baseline_check() -> Outcome {
    let sets = [(8, 2, 3, 3), (4, 2, 3, 2), (16, 2, 3, 8), (6, 3, 2, 4), (10, 2, 4, 5), (5, 2, 2, 1)];
    let mut worst: f64 = 0.0;
    let mut root_exact = true;
    for (i, &(v, s, depth, m)) in sets.iter().enumerate() {
        let stats = rule_averaged_pair_stats(&GrammarParams::new(v, s, depth, m, 0), 100, 1000, i as u64)
            .map_err(|e| e.to_string())?;
        if stats.n_pairs != 100_000 {
            return Err(format!("{} pairs", stats.n_pairs));
        }
        worst = worst.max(stats.max_z());
        root_exact &= ergodic_baseline(v, s, depth, m as f64, depth) == 1.0 / v as f64;
    }
    verdict(
        worst <= 4.0 && root_exact,
        format!("{} parameter sets at 1e5 pairs, max z {worst:.2} (tol 4); root baseline exactly 1/v: {root_exact}", sets.len()),
    )
}

/// Bisection written against the closed form directly, independent of the solver.
fn closed_form_f_per(s: usize) -> f64 {
    let sf = s as f64;
    let n = |f: f64| f * (sf - 1.0) / ((1.0 - sf * f * f) * (1.0 - f)) - 1.0;
    let (mut lo, mut hi) = (1e-9, (1.0 / sf.sqrt()).min(1.0) - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if n(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn thresholds() -> Outcome {
    let e = |r: uturn_core::Result<uturn_core::theory::RootSolution>| r.map(|x| x.root).map_err(|e| e.to_string());
    let per = e(solve_f_per(Mode::Asymptotic, 0, 2, 0))?;
    let inv = e(solve_f_inv(Mode::Asymptotic, 0, 2, 0))?;
    let oracle = closed_form_f_per(2);
    let mut ok = (per - 0.40303).abs() <= 1e-3 && (per - oracle).abs() <= 1e-3 && (inv - 0.5).abs() <= 1e-9;
    let mut large_s = Vec::new();
    for s in [8, 16, 32, 64] {
        let f = e(solve_f_per(Mode::Asymptotic, 0, s, 0))?;
        let sf = s as f64;
        let err = (f - (1.0 / sf - 1.0 / (sf * sf))).abs();
        ok &= err <= 5.0 / sf.powi(3);
        large_s.push(format!("s={s}: {:.2}/s^3", err * sf.powi(3)));
    }
    let per_fin = e(solve_f_per(Mode::Finite, 1_000_000, 2, 60))?;
    let inv_fin = e(solve_f_inv(Mode::Finite, 1_000_000, 2, 60))?;
    ok &= (per_fin - per).abs() <= 1e-3 && (inv_fin - inv).abs() <= 1e-3;
    verdict(
        ok,
        format!(
            "f_per {per:.6} (oracle {oracle:.6}), f_inv {inv:.9}; large s error {}; finite v=1e6 L=60: f_per {per_fin:.6}, f_inv {inv_fin:.6}",
            large_s.join(", ")
        ),
    )
}

fn taus_censored(cut: &CutoffSummary, level: usize) -> f64 {
    match cut.levels[level].tau {
        Relaxation::Relaxed(t) => t,
        Relaxation::NotRelaxed => cut.n_max as f64,
    }
}

fn sweep(config: &ExperimentConfig) -> Result<SweepResult, String> {
    let result = run_sweep(config).map_err(|e| e.to_string())?;
    if let Some(f) = result.failures().next() {
        return Err(format!("cell {} failed: {}", f.cell.index, f.error));
    }
    Ok(result)
}

fn percolation() -> Outcome {
    let mut config = ExperimentConfig::new(16, 2, 4);
    config.m = (2..=12).collect();
    config.k = vec![1];
    config.mask_budgets = vec![1_000, 10_000];
    config.chains = 64;
    config.realizations = 4;
    config.write_curves = false;
    let result = sweep(&config)?;
    let cells: Vec<_> = result.successes().collect();
    let at = |i: usize| &cells[i].cutoffs[1];
    let (z_small, z_large) = (at(0).levels[0].plateau_over_std, at(cells.len() - 1).levels[0].plateau_over_std);
    let taus: Vec<f64> = (0..cells.len()).map(|i| taus_censored(at(i), 0)).collect();
    let peak = (0..taus.len()).max_by(|&a, &b| taus[a].total_cmp(&taus[b])).expect("non-empty grid");
    let interior = peak > 0 && peak + 1 < taus.len();
    let f_peak = cells[peak].cell.f;
    let f_per = solve_f_per(Mode::Finite, 16, 2, 4).map_err(|e| e.to_string())?.root;
    let step = 1.0 / 16.0;
    let ok = z_large <= 3.0 && z_small > 10.0 && interior && (f_peak - f_per).abs() <= step;
    let taus_txt: Vec<String> = taus.iter().map(|t| format!("{t:.0}")).collect();
    verdict(
        ok,
        format!(
            "leaf plateau {z_small:.1} std at m=2, {z_large:.1} std at m=12; tau_0 by m [{}] peaks at f={f_peak:.4}, f_per={f_per:.4}",
            taus_txt.join(" ")
        ),
    )
}

fn oracle_vs_chain() -> Outcome {
    // Pick a realization whose flip graph is fragmented.
    let (g, set, graph) = (0..100u64)
        .find_map(|seed| {
            let g = grammar(8, 2, 3, 2, seed);
            let set = enumerate_sentences(&g, 100_000).ok()?;
            let graph = build_flip_graph(&set);
            (graph.n_components() > 1 && graph.largest_fraction() < 0.5).then_some((g, set, graph))
        })
        .ok_or("no fragmented realization found")?;
    let (chains, burn, window) = (200, 2000, 2000);
    let levels = g.depth() + 1;
    let mut diffs = vec![Vec::with_capacity(chains); levels];
    for c in 0..chains {
        let mut rng = stream_rng(3, Stream::Chain, &[c as u64]);
        let x0_id = rng.random_range(0..set.len());
        let x0 = set.tree(x0_id).clone();
        let mut x = x0.clone();
        let mut sums = vec![0.0; levels];
        for n in 1..=burn + window {
            x = uturn_step(&g, &x, 1, &mut rng);
            if n > burn {
                for (l, s) in sums.iter_mut().enumerate() {
                    *s += layer_overlap(&x0, &x, l).expect("same shape");
                }
            }
        }
        for l in 0..levels {
            let exact = exact_component_plateau(&graph, &set, x0_id, l).map_err(|e| e.to_string())?;
            diffs[l].push(sums[l] / window as f64 - exact);
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (l, d) in diffs.iter().enumerate() {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let se = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let pass = mean.abs() <= 3.0 * se || mean.abs() <= 1e-12;
        ok &= pass;
        parts.push(format!("l={l}: {mean:+.4} ± {se:.4}"));
    }
    verdict(
        ok,
        format!("{} components, largest {:.2}; chain minus exact: {}", graph.n_components(), graph.largest_fraction(), parts.join(", ")),
    )
}

fn regime(m: usize, k: usize) -> Result<CutoffSummary, String> {
    let mut config = ExperimentConfig::new(16, 2, 6);
    config.m = vec![m];
    config.k = vec![k];
    config.mask_budgets = vec![10_000];
    config.chains = 32;
    config.realizations = 2;
    config.write_curves = false;
    let result = sweep(&config)?;
    let cell = result.successes().next().ok_or("no cell")?;
    Ok(cell.cutoffs[0].clone())
}

fn layer_regimes() -> Outcome {
    let fmt = |c: &CutoffSummary| c.levels.iter().map(|l| l.tau.tau().map_or("-".into(), |t| format!("{t:.0}"))).collect::<Vec<String>>().join(" ");
    let memory = regime(2, 1)?;
    let min_z = memory.levels.iter().map(|l| l.plateau_over_std).fold(f64::INFINITY, f64::min);
    let i_ok = memory.levels.iter().all(|l| l.retains_memory());

    let rising = regime(3, 32)?;
    let ii_ok = rising.inversion() == Some(1) && rising.ordering_score().is_some_and(|s| s > 0);

    let f_inv = solve_f_inv(Mode::Finite, 16, 2, 6).map_err(|e| e.to_string())?.root;
    let falling = regime(8, 1)?;
    let iii_ok = 8.0 / 16.0 > f_inv && falling.inversion() == Some(-1) && falling.ordering_score().is_some_and(|s| s < 0);
    verdict(
        i_ok && ii_ok && iii_ok,
        format!(
            "(i) m=2 k=1 min plateau {min_z:.1} std; (ii) m=3 k=32 tau [{}] score {:?}; (iii) m=8 k=1 (f=0.5 > f_inv={f_inv:.3}) tau [{}] score {:?}",
            fmt(&rising),
            rising.ordering_score(),
            fmt(&falling),
            falling.ordering_score()
        ),
    )
}

fn robustness() -> Outcome {
    let mut config = ExperimentConfig::new(16, 2, 4);
    config.m = (2..=12).collect();
    config.k = vec![1, 2, 4, 8, 16];
    config.mask_budgets = vec![1_000, 10_000];
    config.chains = 32;
    config.realizations = 2;
    config.master_seed = 7;
    config.write_curves = false;
    let result = sweep(&config)?;
    let memory = |c: &CutoffSummary| c.levels.iter().any(|l| l.retains_memory());
    let (mut same, mut total) = (0, 0);
    for cell in result.successes() {
        total += 1;
        same += (memory(&cell.cutoffs[0]) == memory(&cell.cutoffs[1])) as usize;
    }
    let frac = same as f64 / total as f64;
    verdict(frac >= 0.9, format!("{same}/{total} cells classified identically at 1e3 and 1e4 masks ({:.0}%)", 100.0 * frac))
}

fn mh_correctness() -> Outcome {
    let g = grammar(4, 2, 2, 2, 0);
    let set = enumerate_sentences(&g, 64).map_err(|e| e.to_string())?;
    let (k, steps) = (2, 1_000_000);
    let energy = EnergySpec::LeafCount { symbol: 0, weight: 1.0 };
    let report = mh_histogram(&g, k, steps, &energy, 5, 64).map_err(|e| e.to_string())?;
    // Reachable set: Hamming-≤k connectivity from any visited sentence.
    let n = set.len();
    let start = report.rows.iter().position(|r| r.count > 0).ok_or("no visits")?;
    let mut reach = vec![false; n];
    let mut queue = VecDeque::from([start]);
    reach[start] = true;
    while let Some(a) = queue.pop_front() {
        for b in 0..n {
            if !reach[b] && hamming(set.tree(a).leaves(), set.tree(b).leaves()) <= k {
                reach[b] = true;
                queue.push_back(b);
            }
        }
    }
    let weight = |i: usize| (-(set.tree(i).leaves().iter().filter(|&&a| a == 0).count() as f64)).exp();
    let z: f64 = (0..n).filter(|&i| reach[i]).map(weight).sum();
    let counts: HashMap<&[u16], u64> = report.rows.iter().map(|r| (set.tree(r.sentence).leaves(), r.count)).collect();
    let tv = 0.5
        * (0..n)
            .map(|i| {
                let target = if reach[i] { weight(i) / z } else { 0.0 };
                (counts[set.tree(i).leaves()] as f64 / steps as f64 - target).abs()
            })
            .sum::<f64>();
    verdict(
        n == 32 && tv <= 0.02,
        format!(
            "{n} sentences, {} reachable, acceptance {:.3}, TV {tv:.4} (tol 0.02)",
            reach.iter().filter(|&&r| r).count(),
            report.acceptance_rate
        ),
    )
}

fn summary_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|name| name.ends_with(".csv"))
        .map(|name| {
            let bytes = std::fs::read(dir.join(&name)).unwrap_or_default();
            (name, bytes)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let mut config = ExperimentConfig::new(8, 2, 3);
    config.m = vec![2, 3, 5];
    config.k = vec![1, 3];
    config.n_max = vec![100, 200];
    config.chains = 20;
    config.realizations = 2;
    config.master_seed = 42;
    let mut outputs = Vec::new();
    for workers in [1, 3] {
        config.workers = Some(workers);
        let result = sweep(&config)?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        write_sweep(&result, dir.path()).map_err(|e| e.to_string())?;
        outputs.push(summary_bytes(dir.path())?);
    }
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    verdict(
        !outputs[0].is_empty() && outputs[0] == outputs[1],
        format!("1 vs 3 workers, {} summary CSVs compared byte for byte: {}", names.len(), names.join(", ")),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("detailed_balance", detailed_balance),
        ("bp_exactness", bp_exactness),
        ("ergodic_baseline", ergodic_baseline_check),
        ("threshold_solver", thresholds),
        ("percolation", percolation),
        ("oracle_vs_chain", oracle_vs_chain),
        ("layer_regimes", layer_regimes),
        ("robustness", robustness),
        ("mh_correctness", mh_correctness),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
