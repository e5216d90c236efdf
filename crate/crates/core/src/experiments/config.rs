use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coding::LossSpec;
use crate::error::{Error, Result};
use crate::learning::{InitStrategy, TrainConfig, UsageMode, DEFAULT_BATCH_SIZE, DEFAULT_ODL_DEAD_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Online Dictionary Learning with OMP coding at sparsity `k`.
    #[default]
    OdlOmp,
    /// Online Dictionary Learning with lasso coding at penalty `lambda`.
    OdlLasso,
    /// K-SVD with OMP coding at sparsity `k`; `iterations` counts sweeps.
    Ksvd,
}

/// Experiment parameters. Loaded from a flat TOML file; every key is
/// optional and defaults to the 50×70, k=3 baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub p: usize,
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub repeats: usize,
    pub p_prime_grid: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    /// Training-set sizes; empty means `[n_train]`.
    pub n_train_grid: Vec<usize>,
    /// Signal dimensions for the phase-transition run; empty means `[d]`.
    pub d_grid: Vec<usize>,
    /// Sparsities for the phase-transition run; empty means `[k]`.
    pub k_grid: Vec<usize>,
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub usage_mode: UsageMode,
    pub init: InitStrategy,
    pub dead_atom_threshold: usize,
    /// Training passes applied to the distilled dictionary; 0 disables.
    pub fine_tune_iterations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 50,
            p: 70,
            k: 3,
            n_train: 300,
            n_test: 1000,
            iterations: 2000,
            batch_size: DEFAULT_BATCH_SIZE,
            repeats: 20,
            p_prime_grid: vec![70, 100, 140, 200, 300, 500],
            sigma_grid: vec![0.0],
            n_train_grid: Vec::new(),
            d_grid: Vec::new(),
            k_grid: Vec::new(),
            algorithm: Algorithm::OdlOmp,
            lambda: 0.1,
            base_seed: 0,
            output_dir: PathBuf::from("results"),
            usage_mode: UsageMode::Coder,
            init: InitStrategy::DataSamples,
            dead_atom_threshold: DEFAULT_ODL_DEAD_THRESHOLD,
            fine_tune_iterations: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text and applies `key=value` overrides on top. Override
    /// values are read as TOML values, falling back to a bare string.
    pub fn from_sources(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.clone()));
            table.insert(key.clone(), parsed);
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_sources(Some(&text), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.p == 0 || self.k == 0 {
            return bad("d, p and k must be positive".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.p_prime_grid.is_empty() || self.sigma_grid.is_empty() {
            return bad("p_prime_grid and sigma_grid must be non-empty".into());
        }
        if self.p_prime_grid.contains(&0) {
            return bad("p_prime_grid entries must be positive".into());
        }
        if self.sigma_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma_grid entries must be finite and nonnegative".into());
        }
        if self.n_train == 0 || self.n_test == 0 || self.n_train_grid.contains(&0) {
            return bad("sample counts must be positive".into());
        }
        for &d in &self.dims() {
            for &k in &self.sparsities() {
                if d == 0 || k == 0 || k > d {
                    return bad(format!("need 1 <= k <= d, got d={d}, k={k}"));
                }
            }
        }
        if self.algorithm == Algorithm::OdlLasso && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.dead_atom_threshold == 0 {
            return bad("iterations, batch_size and dead_atom_threshold must be positive".into());
        }
        Ok(())
    }

    pub fn n_train_values(&self) -> Vec<usize> {
        or_default(&self.n_train_grid, self.n_train)
    }

    pub fn dims(&self) -> Vec<usize> {
        or_default(&self.d_grid, self.d)
    }

    pub fn sparsities(&self) -> Vec<usize> {
        or_default(&self.k_grid, self.k)
    }

    pub fn coder(&self, k: usize) -> LossSpec {
        match self.algorithm {
            Algorithm::OdlLasso => LossSpec::L1Penalized { lambda: self.lambda },
            Algorithm::OdlOmp | Algorithm::Ksvd => LossSpec::L0Constrained { s: k },
        }
    }

    pub fn train_config(&self, p_prime: usize, k: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            init: self.init,
            dead_atom_threshold: self.dead_atom_threshold,
            usage_mode: self.usage_mode,
            ..TrainConfig::new(p_prime, self.iterations, self.coder(k), seed)
        }
    }
}

fn or_default(grid: &[usize], value: usize) -> Vec<usize> {
    if grid.is_empty() {
        vec![value]
    } else {
        grid.to_vec()
    }
}
