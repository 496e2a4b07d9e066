//! Sweep configuration.
//!
//! A config is a JSON object; every key except the grammar lists is optional.
//!
//! ```json
//! {
//!   "v": [16], "s": [2], "depth": [4],
//!   "f": [0.125, 0.25, 0.5],          // or "m": [2, 4, 8]
//!   "rho": [0.0625, 0.25],            // or "k": [1, 4]
//!   "mask_budgets": [1000, 10000],    // n_max as k*n; or "n_max": [...] in steps
//!   "chains": 32, "realizations": 4, "baseline_pairs": 2000,
//!   "record_stride": 1, "window": 0.1, "tau_method": "crossing",
//!   "energy": {"kind": "leaf_count", "symbol": 0, "weight": 1.0},
//!   "shared_x0": false, "write_curves": true,
//!   "master_seed": 1, "workers": 8, "output_dir": "out/sweep"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::{EnergySpec, UturnConfig};
use crate::error::{Error, Result};
use crate::grammar::GrammarParams;
use crate::observables::DEFAULT_WINDOW;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "UTURN_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauMethod {
    /// First interpolated `1/e` crossing of the plateau-subtracted curve.
    #[default]
    Crossing,
    /// Exponential fit through the origin.
    Fit,
}

impl std::str::FromStr for TauMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crossing" => Ok(TauMethod::Crossing),
            "fit" => Ok(TauMethod::Fit),
            other => Err(Error::Config(format!("unknown tau method {other:?}"))),
        }
    }
}

fn default_chains() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_pairs() -> usize {
    2000
}
fn default_window() -> f64 {
    DEFAULT_WINDOW
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub v: Vec<usize>,
    pub s: Vec<usize>,
    pub depth: Vec<usize>,
    /// Rules per symbol; mutually exclusive with `f`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m: Vec<usize>,
    /// Requested rule densities, snapped to the nearest admissible `m`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f: Vec<f64>,
    #[serde(default)]
    pub shared_rules: bool,
    /// Masks per step; mutually exclusive with `rho`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rho: Vec<f64>,
    /// Trajectory cutoffs as cumulative masks `k * n_max`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mask_budgets: Vec<u64>,
    /// Trajectory cutoffs in steps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_max: Vec<usize>,
    #[serde(default = "default_one")]
    pub record_stride: usize,
    /// Chains per grammar realization.
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_one")]
    pub realizations: usize,
    /// Independent pairs per realization for the overlap standard deviation.
    #[serde(default = "default_pairs")]
    pub baseline_pairs: usize,
    /// Levels written to the outputs; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default)]
    pub tau_method: TauMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergySpec>,
    /// One initial state per realization instead of one per chain.
    #[serde(default)]
    pub shared_x0: bool,
    #[serde(default = "default_true")]
    pub write_curves: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A single-grammar config with defaults for everything else.
    pub fn new(v: usize, s: usize, depth: usize) -> Self {
        Self {
            v: vec![v],
            s: vec![s],
            depth: vec![depth],
            m: Vec::new(),
            f: Vec::new(),
            shared_rules: false,
            k: Vec::new(),
            rho: Vec::new(),
            mask_budgets: Vec::new(),
            n_max: Vec::new(),
            record_stride: 1,
            chains: default_chains(),
            realizations: 1,
            baseline_pairs: default_pairs(),
            levels: None,
            window: DEFAULT_WINDOW,
            tau_method: TauMethod::Crossing,
            energy: None,
            shared_x0: false,
            write_curves: true,
            master_seed: 0,
            workers: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Output directory: the config value, else `$UTURN_OUT_DIR`, else `fallback`.
    pub fn resolve_output_dir(&self, fallback: &Path) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| fallback.to_path_buf())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.v.is_empty() || self.s.is_empty() || self.depth.is_empty() {
            return bad("v, s and depth must be non-empty".into());
        }
        if self.m.is_empty() == self.f.is_empty() {
            return bad("give exactly one of m or f".into());
        }
        if self.k.is_empty() == self.rho.is_empty() {
            return bad("give exactly one of k or rho".into());
        }
        if self.mask_budgets.is_empty() == self.n_max.is_empty() {
            return bad("give exactly one of mask_budgets or n_max".into());
        }
        if self.mask_budgets.contains(&0) || self.n_max.contains(&0) {
            return bad("trajectory cutoffs must be positive".into());
        }
        if self.chains == 0 || self.realizations == 0 || self.record_stride == 0 {
            return bad("chains, realizations and record_stride must be positive".into());
        }
        if !(self.window > 0.0 && self.window <= 1.0) {
            return bad(format!("window {} outside (0, 1]", self.window));
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if let Some(f) = self.f.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("rule density {f} outside (0, 1]"));
        }
        for &v in &self.v {
            for &s in &self.s {
                for &depth in &self.depth {
                    let d = s.checked_pow(depth as u32).ok_or_else(|| Error::Config("s^depth overflows".into()))?;
                    for &m in &self.m {
                        GrammarParams::new(v, s, depth, m, 0).validate()?;
                    }
                    if !self.f.is_empty() {
                        GrammarParams::new(v, s, depth, 1, 0).validate()?;
                    }
                    for &k in &self.k {
                        UturnConfig::new(k, 1).validate(d)?;
                    }
                    for &rho in &self.rho {
                        UturnConfig::k_from_rho(rho, d)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One `(v, s, L, f, ρ)` grid point after snapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub v: usize,
    pub s: usize,
    pub depth: usize,
    pub m: usize,
    /// Requested density, if the grid was given in `f`.
    pub f_requested: Option<f64>,
    /// Achieved density `m / v^(s-1)`.
    pub f: f64,
    pub k: usize,
    pub rho_requested: Option<f64>,
    /// Achieved masking fraction `k / d`.
    pub rho: f64,
    /// Trajectory cutoffs in steps, one per configured cutoff.
    pub n_max: Vec<usize>,
}

impl Cell {
    pub fn params(&self, seed: u64, shared_rules: bool) -> GrammarParams {
        GrammarParams { shared_rules, ..GrammarParams::new(self.v, self.s, self.depth, self.m, seed) }
    }

    pub fn leaf_count(&self) -> usize {
        self.s.pow(self.depth as u32)
    }
}

/// Nearest admissible `m` for a requested density.
pub fn snap_density(f: f64, v: usize, s: usize) -> usize {
    let space = (v as f64).powi(s as i32 - 1);
    ((f * space).round() as usize).clamp(1, space as usize)
}

/// Grid cells in row-major order over `v, s, depth, f|m, rho|k`.
pub fn cells(config: &ExperimentConfig) -> Result<Vec<Cell>> {
    config.validate()?;
    let mut out = Vec::new();
    for &v in &config.v {
        for &s in &config.s {
            for &depth in &config.depth {
                let d = s.pow(depth as u32);
                let densities: Vec<(usize, Option<f64>)> = if config.f.is_empty() {
                    config.m.iter().map(|&m| (m, None)).collect()
                } else {
                    config.f.iter().map(|&f| (snap_density(f, v, s), Some(f))).collect()
                };
                let masks: Vec<(usize, Option<f64>)> = if config.rho.is_empty() {
                    config.k.iter().map(|&k| (k, None)).collect()
                } else {
                    config
                        .rho
                        .iter()
                        .map(|&r| UturnConfig::k_from_rho(r, d).map(|k| (k, Some(r))))
                        .collect::<Result<_>>()?
                };
                for &(m, f_requested) in &densities {
                    for &(k, rho_requested) in &masks {
                        let n_max = if config.n_max.is_empty() {
                            config.mask_budgets.iter().map(|&b| b.div_ceil(k as u64) as usize).collect()
                        } else {
                            config.n_max.clone()
                        };
                        out.push(Cell {
                            index: out.len(),
                            v,
                            s,
                            depth,
                            m,
                            f_requested,
                            f: m as f64 / (v as f64).powi(s as i32 - 1),
                            k,
                            rho_requested,
                            rho: k as f64 / d as f64,
                            n_max,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ExperimentConfig {
        ExperimentConfig { f: vec![0.1, 0.5, 1.0], rho: vec![0.1, 0.5, 1.0], mask_budgets: vec![100, 1000], ..ExperimentConfig::new(4, 2, 2) }
    }

    #[test]
    fn snapping_rounds_and_clamps() {
        assert_eq!(snap_density(0.3, 16, 2), 5);
        assert_eq!(snap_density(0.001, 16, 2), 1);
        assert_eq!(snap_density(1.0, 4, 3), 16);
    }

    #[test]
    fn toy_grid_has_nine_cells() {
        let cells = cells(&toy()).unwrap();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[0].m, 1);
        assert_eq!(cells[0].k, 1);
        assert_eq!(cells[0].n_max, vec![100, 1000]);
        assert_eq!(cells[8].k, 4);
        assert_eq!(cells[8].n_max, vec![25, 250]);
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn json_roundtrip_and_defaults() {
        let c = toy();
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        let minimal = r#"{"v":[4],"s":[2],"depth":[2],"m":[2],"k":[1],"n_max":[10]}"#;
        let c = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(c.chains, 32);
        assert!(c.write_curves);
        assert!(c.validate().is_ok());
        assert!(ExperimentConfig::from_json(r#"{"v":[4],"s":[2],"depth":[2],"bogus":1}"#).is_err());
    }

    #[test]
    fn validation_catches_conflicts() {
        let mut c = toy();
        c.m = vec![2];
        assert!(c.validate().is_err());
        let mut c = toy();
        c.f = Vec::new();
        c.m = vec![5];
        assert!(c.validate().is_err());
        let mut c = toy();
        c.mask_budgets.clear();
        assert!(c.validate().is_err());
    }
}
