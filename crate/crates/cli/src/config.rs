//! `key = value` run configuration.
//!
//! Values come from, in increasing priority: built-in defaults, the config
//! file, `--set key=value` options, then dedicated flags such as `--bits`.
//! Blank lines and text after `#` are ignored. Unknown keys are errors.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `bits` | 24 | code length |
//! | `rounds` | 15 | boosting rounds per bit |
//! | `alpha`, `beta` | 1, 1 | within-side / cross-side objective weights |
//! | `nu1` | 0 | L1 penalty on learner weights (0 = off) |
//! | `nu2` | 1 | database-side share of that penalty |
//! | `nu3`, `nu4` | auto | different-label weights; auto = same/different pair-count ratio |
//! | `max_outer` | 10 | outer iteration cap |
//! | `conv_tol` | 0.001 | changed-bit fraction that counts as converged |
//! | `balance_tol` | 0.1 | allowed deviation from half ones per bit and per code |
//! | `max_sweeps` | 20 | bit-flip sweeps per descent |
//! | `pool_cap` | 20000 | hypercut pool cap; `none` for no cap |
//! | `seed` | 0 | master seed |
//! | `mu` | auto | affinity threshold; auto = per-set median distance |
//! | `gamma_g`, `gamma_s` | auto | kernel bandwidths; auto = data heuristics |
//! | `cov_ridge` | 0.001 | covariance ridge scale |
//! | `split_fraction` | 0.5 | share of training sets on the query side |
//! | `stratified` | true | split each label separately |
//! | `cutoffs` | 100,200,400,800,1600 | evaluation cutoffs |
//! | `radius` | 2 | evaluation Hamming radii (comma list) |
//! | `empty_bucket_as_zero` | true | empty radius buckets count as precision 0 |
//! | `kernel_cache` | none | directory for cached kernel matrices |

use std::path::PathBuf;

use sethash::eval::EvalConfig;
use sethash::kernels::{KernelConfig, Threshold};
use sethash::TrainerConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub split_fraction: f64,
    pub stratified: bool,
    pub eval: EvalConfig,
    pub kernel_cache: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trainer: TrainerConfig::default(),
            split_fraction: 0.5,
            stratified: true,
            eval: EvalConfig::default(),
            kernel_cache: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
}

fn auto_or(key: &str, v: &str) -> Result<Option<f64>, String> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("bad value {v:?} for {key}, expected true or false")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.trainer;
        let k: &mut KernelConfig = &mut t.kernel;
        let v = value.trim();
        match key.trim() {
            "bits" => t.bits = num(key, v)?,
            "rounds" => t.rounds = num(key, v)?,
            "alpha" => t.alpha = num(key, v)?,
            "beta" => t.beta = num(key, v)?,
            "nu1" => t.nu1 = num(key, v)?,
            "nu2" => t.nu2 = num(key, v)?,
            "nu3" => t.nu3 = auto_or(key, v)?,
            "nu4" => t.nu4 = auto_or(key, v)?,
            "max_outer" => t.max_outer = num(key, v)?,
            "conv_tol" => t.conv_tol = num(key, v)?,
            "balance_tol" => t.balance_tol = num(key, v)?,
            "max_sweeps" => t.max_sweeps = num(key, v)?,
            "pool_cap" => {
                t.pool_cap = if v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "seed" => t.seed = num(key, v)?,
            "mu" => k.mu = auto_or(key, v)?.map_or(Threshold::Auto, Threshold::Fixed),
            "gamma_g" => k.gamma_g = auto_or(key, v)?,
            "gamma_s" => k.gamma_s = auto_or(key, v)?,
            "cov_ridge" => k.cov_ridge = num(key, v)?,
            "split_fraction" => self.split_fraction = num(key, v)?,
            "stratified" => self.stratified = flag(key, v)?,
            "cutoffs" => self.eval.cutoffs = list(key, v)?,
            "radius" => self.eval.radii = list(key, v)?,
            "empty_bucket_as_zero" => self.eval.empty_bucket_as_zero = flag(key, v)?,
            "kernel_cache" => {
                self.kernel_cache = (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
            }
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key = value", i + 1))?;
            self.set(key, value)
                .map_err(|e| format!("config line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), String> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| format!("override {kv:?} is not key=value"))?;
        self.set(key, value)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.trainer.validate().map_err(|e| e.to_string())?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(format!("split_fraction = {} must lie in (0, 1)", self.split_fraction));
        }
        if self.eval.cutoffs.contains(&0) {
            return Err("cutoffs must be positive".into());
        }
        Ok(())
    }
}
