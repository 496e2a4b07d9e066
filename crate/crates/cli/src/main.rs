use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use uturn_core::harness::config::OUT_DIR_ENV;
use uturn_core::harness::output::{write_csv, write_json_file, RunManifest, TaskSeed};
use uturn_core::harness::runs::{mh_histogram, oracle_report, run_chains, sample_sentences, write_chain_run, ChainSpec};
use uturn_core::harness::{run_sweep, snap_density, write_sweep, ExperimentConfig, TauMethod};
use uturn_core::oracle::DEFAULT_BUDGET;
use uturn_core::rng::{derive_seed, Stream};
use uturn_core::theory::threshold_report;
use uturn_core::validate::{self, ValidationOptions};
use uturn_core::{EnergySpec, Grammar, GrammarParams, Mode, UturnConfig};

#[derive(Parser)]
#[command(name = "uturn", version, about = "U-turn Markov chains on the Random Hierarchy Model")]
struct Cli {
    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    error_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a grammar and write it, optionally with sample sentences.
    Gen {
        #[command(flatten)]
        grammar: GrammarArgs,
        /// Number of sentences to emit.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run U-turn chains and write correlation curves.
    Chain {
        #[command(flatten)]
        grammar: GrammarArgs,
        #[command(flatten)]
        moves: MoveArgs,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        chains: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Energy as JSON, e.g. '{"kind":"leaf_count","symbol":0,"weight":1.0}'.
        #[arg(long)]
        energy: Option<String>,
        /// Also write per-chain overlap traces.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy-modified chain on an enumerable grammar: state histogram and acceptance.
    Mh {
        #[command(flatten)]
        grammar: GrammarArgs,
        #[command(flatten)]
        moves: MoveArgs,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value = r#"{"kind":"leaf_count","symbol":0,"weight":1.0}"#)]
        energy: String,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Percolation and inversion thresholds.
    Theory {
        #[arg(long, value_enum, default_value_t = ModeArg::Asymptotic)]
        mode: ModeArg,
        #[arg(long)]
        v: Option<usize>,
        #[arg(long, default_value_t = 2)]
        s: usize,
        #[arg(long)]
        depth: Option<usize>,
        /// Densities at which to tabulate the branching number, comma separated.
        #[arg(long, value_delimiter = ',')]
        f_grid: Vec<f64>,
        /// Write the report as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate sentences, build flip graphs and report components and exact plateaus.
    Oracle {
        #[command(flatten)]
        grammar: GrammarArgs,
        #[arg(long, default_value_t = 1)]
        realizations: usize,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full (f, rho) sweep from a JSON config; flags override config keys.
    Sweep(SweepArgs),
    /// Run the built-in self-check suite.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        bp_cases: usize,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Finite,
    Asymptotic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Finite => Mode::Finite,
            ModeArg::Asymptotic => Mode::Asymptotic,
        }
    }
}

#[derive(Args)]
struct GrammarArgs {
    /// Load the grammar from a JSON file instead of sampling one.
    #[arg(long, conflicts_with_all = ["v", "m", "f"])]
    grammar: Option<PathBuf>,
    #[arg(long)]
    v: Option<usize>,
    #[arg(long, default_value_t = 2)]
    s: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, conflicts_with = "f")]
    m: Option<usize>,
    /// Rule density, snapped to the nearest m.
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    shared_rules: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GrammarArgs {
    fn params(&self, realization: usize) -> Result<GrammarParams> {
        let v = self.v.context("--v is required unless --grammar is given")?;
        let m = match (self.m, self.f) {
            (Some(m), _) => m,
            (None, Some(f)) => snap_density(f, v, self.s),
            (None, None) => bail!("give --m or --f"),
        };
        let seed = if realization == 0 { self.seed } else { derive_seed(self.seed, Stream::Grammar, &[realization as u64]) };
        Ok(GrammarParams { shared_rules: self.shared_rules, ..GrammarParams::new(v, self.s, self.depth, m, seed) })
    }

    fn load(&self, realization: usize) -> Result<Grammar> {
        match &self.grammar {
            Some(path) => Grammar::load(path).with_context(|| format!("loading {}", path.display())),
            None => Ok(Grammar::sample(&self.params(realization)?)?),
        }
    }
}

#[derive(Args)]
struct MoveArgs {
    /// Leaves masked per step.
    #[arg(long, conflicts_with = "rho")]
    k: Option<usize>,
    /// Masking fraction; k = round(rho * d).
    #[arg(long)]
    rho: Option<f64>,
}

impl MoveArgs {
    fn k(&self, d: usize) -> Result<usize> {
        match (self.k, self.rho) {
            (Some(k), _) => Ok(k),
            (None, Some(rho)) => Ok(UturnConfig::k_from_rho(rho, d)?),
            (None, None) => Ok(1),
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    v: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    s: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    depth: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    f: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    mask_budgets: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    n_max: Option<Vec<usize>>,
    #[arg(long)]
    record_stride: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    baseline_pairs: Option<usize>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    tau_method: Option<String>,
    #[arg(long)]
    energy: Option<String>,
    #[arg(long)]
    shared_x0: bool,
    #[arg(long)]
    no_curves: bool,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SweepArgs {
    /// Config file (if any) with command-line flags applied on top.
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => {
                let mut c = ExperimentConfig::new(0, 0, 0);
                c.v.clear();
                c.s.clear();
                c.depth.clear();
                c
            }
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(x) = &self.$field {
                    c.$field = x.clone();
                }
            )*};
        }
        set!(v, s, depth, record_stride, chains, realizations, baseline_pairs, window);
        // Grid axes given on the command line replace their alternative from the file.
        if let Some(m) = &self.m {
            c.m = m.clone();
            c.f.clear();
        }
        if let Some(f) = &self.f {
            c.f = f.clone();
            c.m.clear();
        }
        if let Some(k) = &self.k {
            c.k = k.clone();
            c.rho.clear();
        }
        if let Some(rho) = &self.rho {
            c.rho = rho.clone();
            c.k.clear();
        }
        if let Some(b) = &self.mask_budgets {
            c.mask_budgets = b.clone();
            c.n_max.clear();
        }
        if let Some(n) = &self.n_max {
            c.n_max = n.clone();
            c.mask_budgets.clear();
        }
        if let Some(t) = &self.tau_method {
            c.tau_method = t.parse::<TauMethod>()?;
        }
        if let Some(e) = &self.energy {
            c.energy = Some(parse_energy(e)?);
        }
        if self.shared_x0 {
            c.shared_x0 = true;
        }
        if self.no_curves {
            c.write_curves = false;
        }
        if let Some(seed) = self.master_seed {
            c.master_seed = seed;
        }
        if let Some(w) = self.workers {
            c.workers = Some(w);
        }
        if let Some(out) = &self.out {
            c.output_dir = Some(out.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_energy(text: &str) -> Result<EnergySpec> {
    serde_json::from_str(text).with_context(|| format!("invalid energy spec {text:?}"))
}

fn out_dir(flag: &Option<PathBuf>, command: &str) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(|d| PathBuf::from(d).join(command)))
        .unwrap_or_else(|| PathBuf::from("uturn-out").join(command))
}

fn report_files(dir: &Path, manifest: &RunManifest) {
    for f in &manifest.files {
        println!("wrote {} ({} rows)", dir.join(&f.path).display(), f.rows);
    }
}

fn gen(grammar: &GrammarArgs, samples: usize, out: &Option<PathBuf>) -> Result<()> {
    let g = grammar.load(0)?;
    let dir = out_dir(out, "gen");
    std::fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new("gen", serde_json::to_value(g.params())?);
    g.save(&dir.join("grammar.json"))?;
    manifest.files.push(uturn_core::harness::output::OutputFile { path: "grammar.json".into(), rows: 1 });
    if samples > 0 {
        let rows = sample_sentences(&g, samples, grammar.seed);
        manifest.files.push(write_csv(&dir, "sentences.csv", &rows)?);
    }
    manifest.seeds.push(TaskSeed { cell: 0, realization: 0, grammar_seed: g.params().seed });
    let p = g.params();
    println!("grammar v={} s={} depth={} m={} f={} sentences={:e}", p.v, p.s, p.depth, p.m, p.rule_density(), p.sentence_count());
    report_files(&dir, &manifest.finish(&dir)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { grammar, samples, out } => gen(&grammar, samples, &out)?,
        Command::Chain { grammar, moves, steps, chains, stride, energy, trace, out } => {
            let g = grammar.load(0)?;
            let spec = ChainSpec {
                k: moves.k(g.leaf_count())?,
                n_steps: steps,
                chains,
                record_stride: stride,
                seed: grammar.seed,
                energy: energy.as_deref().map(parse_energy).transpose()?,
                trace,
            };
            let result = run_chains(&g, &spec)?;
            let dir = out_dir(&out, "chain");
            let manifest = write_chain_run(&dir, &g, &spec, &result)?;
            for c in &result.curves {
                println!("level {} C({}) = {:.6} C_tilde = {:.6}", c.level, steps, c.raw.last().unwrap_or(&f64::NAN), c.normalized.last().unwrap_or(&f64::NAN));
            }
            report_files(&dir, &manifest);
        }
        Command::Mh { grammar, moves, steps, energy, budget, out } => {
            let g = grammar.load(0)?;
            let energy = parse_energy(&energy)?;
            let report = mh_histogram(&g, moves.k(g.leaf_count())?, steps, &energy, grammar.seed, budget)?;
            let dir = out_dir(&out, "mh");
            std::fs::create_dir_all(&dir)?;
            let mut manifest = RunManifest::new("mh", serde_json::json!({ "grammar": g.params(), "report": &report }));
            manifest.files.push(write_csv(&dir, "histogram.csv", &report.rows)?);
            manifest.files.push(write_json_file(&dir, "mh.json", &report)?);
            println!("acceptance_rate = {:.6}", report.acceptance_rate);
            if let Some(tv) = report.tv_reachable {
                println!("tv_reachable = {tv:.6} over {} sentences", report.reachable.unwrap_or(0));
            }
            println!("tv_full = {:.6}", report.tv_full);
            report_files(&dir, &manifest.finish(&dir)?);
        }
        Command::Theory { mode, v, s, depth, f_grid, out } => {
            let mode: Mode = mode.into();
            let (v, depth) = match mode {
                Mode::Finite => (v.context("--v is required in finite mode")?, depth.context("--depth is required in finite mode")?),
                Mode::Asymptotic => (v.unwrap_or(0), depth.unwrap_or(0)),
            };
            let report = threshold_report(mode, v, s, depth, &f_grid);
            match (report.f_per, &report.f_per_error) {
                (Some(f), _) => println!("f_per = {:.4}", f.root),
                (None, e) => println!("f_per = none ({})", e.as_deref().unwrap_or("no root")),
            }
            match (report.f_inv, &report.f_inv_error) {
                (Some(f), _) => println!("f_inv = {:.4}", f.root),
                (None, e) => println!("f_inv = none ({})", e.as_deref().unwrap_or("no root")),
            }
            for p in &report.grid {
                match p.branching {
                    Some(n) => println!("f = {:.6}  n = {n:.6}", p.f),
                    None => println!("f = {:.6}  n = undefined", p.f),
                }
            }
            if let Some(path) = out {
                uturn_core::harness::output::write_json(&path, &report)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Oracle { grammar, realizations, budget, out } => {
            let grammars = (0..realizations).map(|r| grammar.load(r)).collect::<Result<Vec<_>>>()?;
            let report = oracle_report(&grammars, budget)?;
            let dir = out_dir(&out, "oracle");
            std::fs::create_dir_all(&dir)?;
            let mut manifest = RunManifest::new("oracle", serde_json::json!({ "grammars": grammars.iter().map(|g| g.params()).collect::<Vec<_>>(), "budget": budget }));
            manifest.files.push(write_csv(&dir, "components.csv", &report.components)?);
            manifest.files.push(write_json_file(&dir, "plateaus.json", &report.plateaus)?);
            for (r, g) in grammars.iter().enumerate() {
                manifest.seeds.push(TaskSeed { cell: 0, realization: r, grammar_seed: g.params().seed });
            }
            for c in &report.components {
                println!(
                    "realization {}: {} sentences, {} components, largest fraction {:.6}",
                    c.realization, c.n_sentences, c.n_components, c.largest_fraction
                );
            }
            report_files(&dir, &manifest.finish(&dir)?);
        }
        Command::Sweep(args) => {
            let config = args.config()?;
            let dir = config.resolve_output_dir(&PathBuf::from("uturn-out").join("sweep"));
            let result = run_sweep(&config)?;
            let manifest = write_sweep(&result, &dir)?;
            for f in result.failures() {
                eprintln!("cell {} failed: {}", f.cell.index, f.error);
            }
            println!("{} cells, {} failed", result.cells.len(), manifest.failures.len());
            report_files(&dir, &manifest);
        }
        Command::Validate { seed, bp_cases, json } => {
            let report = validate::run(&ValidationOptions { seed, bp_cases, ..Default::default() })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for c in &report.checks {
                    println!("{} {:<28} {:.3e} (tol {:.0e})  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance, c.detail);
                }
            }
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let error_json = cli.error_json;
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if error_json {
                let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
                eprintln!("{}", serde_json::json!({ "error": e.to_string(), "causes": chain }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
