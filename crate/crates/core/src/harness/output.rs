//! CSV and JSON persistence.
//!
//! Floats are written in their shortest round-trip form, so identical values
//! always produce identical bytes. Missing values (for example `tau` of a
//! level that did not relax) are empty fields.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::sweep::{CellFailure, SweepResult};
use crate::error::{Error, Result};
use crate::observables::{CorrelationCurve, Relaxation};
use crate::oracle::ComponentStats;

/// One entry of the output inventory; `rows` excludes the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSeed {
    pub cell: usize,
    pub realization: usize,
    pub grammar_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub code_version: String,
    /// Unix seconds.
    pub started: u64,
    pub finished: u64,
    pub seeds: Vec<TaskSeed>,
    pub files: Vec<OutputFile>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started: unix_now(),
            finished: 0,
            seeds: Vec::new(),
            files: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Stamp the finish time and write `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.finished = unix_now();
        write_json(&dir.join("manifest.json"), &self)?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Check that every listed file exists with the stated number of rows.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for file in &self.files {
            let path = dir.join(&file.path);
            let rows = if path.extension().is_some_and(|e| e == "csv") {
                csv::Reader::from_path(&path)?.records().count()
            } else {
                std::fs::metadata(&path)?;
                1
            };
            if rows != file.rows {
                return Err(Error::ShapeMismatch { expected: file.rows, found: rows });
            }
        }
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Write `rows` to `dir/rel` and return its inventory entry.
pub fn write_csv<T: Serialize>(dir: &Path, rel: impl Into<PathBuf>, rows: &[T]) -> Result<OutputFile> {
    let rel = rel.into();
    let path = dir.join(&rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(OutputFile { path: rel, rows: rows.len() })
}

/// A JSON file in the inventory counts as one row.
pub fn write_json_file<T: Serialize>(dir: &Path, rel: impl Into<PathBuf>, value: &T) -> Result<OutputFile> {
    let rel = rel.into();
    write_json(&dir.join(&rel), value)?;
    Ok(OutputFile { path: rel, rows: 1 })
}

/// Curve CSV row: `level, n, cumulative_masks, C, C_tilde, stderr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub level: usize,
    pub n: usize,
    pub cumulative_masks: u64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "C_tilde")]
    pub c_tilde: f64,
    pub stderr: f64,
}

pub fn curve_rows(curves: &[CorrelationCurve]) -> Vec<CurveRow> {
    curves
        .iter()
        .flat_map(|c| {
            (0..c.steps.len()).map(move |i| CurveRow {
                level: c.level,
                n: c.steps[i],
                cumulative_masks: c.cumulative_masks[i],
                c: c.raw[i],
                c_tilde: c.normalized.get(i).copied().unwrap_or(f64::NAN),
                stderr: c.stderr[i],
            })
        })
        .collect()
}

/// Plateau / relaxation summary row. The leading columns identify the cell;
/// `tau` is in steps and `tau_masks = k * tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: usize,
    pub v: usize,
    pub s: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    pub f_requested: Option<f64>,
    pub f: f64,
    pub k: usize,
    pub rho: f64,
    pub n_max: usize,
    pub n_max_masks: u64,
    pub level: usize,
    pub baseline: f64,
    pub plateau: f64,
    pub plateau_stderr: f64,
    pub plateau_over_std: f64,
    pub tau: Option<f64>,
    pub tau_masks: Option<f64>,
    /// `relaxed` or `not_relaxed`.
    pub status: String,
}

/// Per-cell row with the layer-ordering diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub cell: usize,
    pub v: usize,
    pub s: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    pub f_requested: Option<f64>,
    pub f: f64,
    pub k: usize,
    pub rho_requested: Option<f64>,
    pub rho: f64,
    pub n_max: usize,
    pub n_max_masks: u64,
    pub n_chains: usize,
    /// `sign(τ_top - τ_bottom)`, only when both relaxed.
    pub inversion: Option<i8>,
    /// `Σ_{i<j} sign(τ_j - τ_i)`, only when every level relaxed.
    pub ordering_score: Option<i64>,
    pub memory_levels: usize,
}

/// Rows for cutoff number `which` of every successful cell.
pub fn summary_rows(result: &SweepResult, which: usize) -> (Vec<SummaryRow>, Vec<CellRow>) {
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for r in result.successes() {
        let c = &r.cell;
        let cut = &r.cutoffs[which];
        let n_max_masks = (cut.n_max * c.k) as u64;
        for l in &cut.levels {
            rows.push(SummaryRow {
                cell: c.index,
                v: c.v,
                s: c.s,
                depth: c.depth,
                m: c.m,
                f_requested: c.f_requested,
                f: c.f,
                k: c.k,
                rho: c.rho,
                n_max: cut.n_max,
                n_max_masks,
                level: l.level,
                baseline: l.baseline,
                plateau: l.plateau,
                plateau_stderr: l.plateau_stderr,
                plateau_over_std: l.plateau_over_std,
                tau: l.tau.tau(),
                tau_masks: l.tau.in_masks(c.k).tau(),
                status: match l.tau {
                    Relaxation::Relaxed(_) => "relaxed".into(),
                    Relaxation::NotRelaxed => "not_relaxed".into(),
                },
            });
        }
        cells.push(CellRow {
            cell: c.index,
            v: c.v,
            s: c.s,
            depth: c.depth,
            m: c.m,
            f_requested: c.f_requested,
            f: c.f,
            k: c.k,
            rho_requested: c.rho_requested,
            rho: c.rho,
            n_max: cut.n_max,
            n_max_masks,
            n_chains: r.n_chains,
            inversion: cut.inversion(),
            ordering_score: cut.ordering_score(),
            memory_levels: cut.levels.iter().filter(|l| l.retains_memory()).count(),
        });
    }
    (rows, cells)
}

/// Label of cutoff `which`: the configured budget or step count.
pub fn cutoff_label(config: &ExperimentConfig, which: usize) -> String {
    if config.mask_budgets.is_empty() {
        format!("n{}", config.n_max[which])
    } else {
        format!("masks{}", config.mask_budgets[which])
    }
}

/// Write all sweep outputs into `dir`:
///
/// - `summary_<cutoff>.csv` ([`SummaryRow`]) and `cells_<cutoff>.csv` ([`CellRow`]) per cutoff;
/// - `curves/cell_<index>.csv` ([`CurveRow`]) when `write_curves` is set;
/// - `config.json` and `manifest.json`.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let config = &result.config;
    let mut manifest = RunManifest::new("sweep", serde_json::to_value(config)?);
    manifest.files.push(write_json_file(dir, "config.json", config)?);
    let n_cutoffs = config.mask_budgets.len().max(config.n_max.len());
    for which in 0..n_cutoffs {
        let label = cutoff_label(config, which);
        let (rows, cells) = summary_rows(result, which);
        manifest.files.push(write_csv(dir, format!("summary_{label}.csv"), &rows)?);
        manifest.files.push(write_csv(dir, format!("cells_{label}.csv"), &cells)?);
    }
    for r in result.successes() {
        if config.write_curves {
            let rows = curve_rows(&r.curves);
            manifest.files.push(write_csv(dir, format!("curves/cell_{:04}.csv", r.cell.index), &rows)?);
        }
        for (realization, &grammar_seed) in r.grammar_seeds.iter().enumerate() {
            manifest.seeds.push(TaskSeed { cell: r.cell.index, realization, grammar_seed });
        }
    }
    manifest.failures = result.failures().cloned().collect();
    manifest.finish(dir)
}

/// Component statistics CSV: `v, s, L, m, f, realization, n_sentences, n_components, largest_fraction`.
pub fn write_components(dir: &Path, rel: &str, stats: &[ComponentStats]) -> Result<OutputFile> {
    write_csv(dir, rel, stats)
}

/// Read a CSV written by this module back into rows.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}
