//! Declarative run configuration and artifact helpers for the CLI.
//!
//! A single JSON config drives every subcommand; command-line flags override
//! individual keys. All randomness flows from the named seeds, so a run is
//! reproducible from (config file, flag overrides) alone.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::bp::{BoundModel, LossP, DEFAULT_ANCHOR_CAP};
use crate::datagen::{ConfoundRule, CsvSchema, Dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::evaluation::{BenchmarkConfig, MethodSpec};
use crate::kernels::KernelKind;
use crate::model_selection::{Grid, SelectionResult, SplitPlan};
use crate::propensity::DEFAULT_CLIP_CAP;

/// Where the observational data comes from. Exactly one source per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSource {
    Synthetic {
        dgp: DgpSpec,
        #[serde(default)]
        confound: Option<ConfoundRule>,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
}

/// Propensity estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensitySettings {
    pub reg_grid: Vec<f64>,
    pub folds: usize,
    pub clip_cap: f64,
}

impl Default for PropensitySettings {
    fn default() -> Self {
        PropensitySettings {
            reg_grid: crate::propensity::DEFAULT_REG_GRID.to_vec(),
            folds: 3,
            clip_cap: DEFAULT_CLIP_CAP,
        }
    }
}

/// Full run configuration shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub out_dir: PathBuf,
    /// Base seed for a single fit/evaluate run.
    pub seed: u64,
    /// Replicate seeds for simulate/benchmark runs.
    pub seeds: Vec<u64>,
    pub split: SplitPlan,
    pub propensity: PropensitySettings,
    pub loss: LossP,
    pub coupled: bool,
    pub required_fcr: f64,
    pub kernel_kind: KernelKind,
    /// Explicit hyperparameter grid; when absent a data-scaled default is
    /// built from the training split.
    pub grid: Option<Grid>,
    pub anchor_cap: usize,
    pub solver_tolerance: f64,
    pub solver_max_iter: usize,
    /// Benchmark-only settings.
    pub methods: Vec<MethodSpec>,
    pub levels: Vec<f64>,
    pub n_test: usize,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gamma_multipliers: Vec<f64>,
    pub bandwidth_factors: Vec<f64>,
    pub ridge_lambdas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchmarkConfig::default();
        RunConfig {
            data: DataSource::Synthetic {
                dgp: DgpSpec::IstLike { n: 3000, seed: 0 },
                confound: Some(ConfoundRule::ist_default()),
            },
            out_dir: PathBuf::from("out"),
            seed: 0,
            seeds: vec![0],
            split: SplitPlan::default(),
            propensity: PropensitySettings::default(),
            loss: LossP::L2,
            coupled: false,
            required_fcr: 0.05,
            kernel_kind: KernelKind::Rbf,
            grid: None,
            anchor_cap: DEFAULT_ANCHOR_CAP,
            solver_tolerance: 1e-4,
            solver_max_iter: 20_000,
            methods: bench.methods,
            levels: bench.levels,
            n_test: bench.n_test,
            alphas: bench.alphas,
            betas: bench.betas,
            gamma_multipliers: bench.gamma_multipliers,
            bandwidth_factors: bench.bandwidth_factors,
            ridge_lambdas: bench.ridge_lambdas,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.required_fcr && self.required_fcr < 1.0) {
            return Err(Error::InvalidArgument("required_fcr must be in (0, 1)".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seeds must be non-empty".into()));
        }
        if self.anchor_cap == 0 {
            return Err(Error::InvalidArgument("anchor_cap must be >= 1".into()));
        }
        if let Some(grid) = &self.grid {
            grid.validate()?;
        }
        self.split.validate()
    }

    /// Load the observational dataset: generate-and-confound for synthetic
    /// sources (using `seed`), or read the CSV.
    pub fn load_dataset(&self, seed: u64) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic { dgp, confound } => {
                let ds = dgp.with_seed(seed).generate()?;
                match confound {
                    Some(rule) => crate::datagen::confound(&ds, rule, seed ^ 0xC0F0),
                    None => Ok(ds),
                }
            }
            DataSource::Csv { path, schema } => crate::datagen::load_csv(path, schema),
        }
    }

    /// Translate into a benchmark configuration. Benchmarks need a synthetic
    /// source so each replicate can draw fresh train and test sets.
    pub fn to_benchmark(&self) -> Result<BenchmarkConfig> {
        let (dgp, confound) = match &self.data {
            DataSource::Synthetic { dgp, confound } => (dgp.clone(), confound.clone()),
            DataSource::Csv { .. } => {
                return Err(Error::InvalidArgument(
                    "benchmark needs a synthetic data source (replicates draw fresh data)".into(),
                ))
            }
        };
        Ok(BenchmarkConfig {
            dgp,
            confound,
            n_test: self.n_test,
            seeds: self.seeds.clone(),
            levels: self.levels.clone(),
            methods: self.methods.clone(),
            split: self.split.clone(),
            kernel_kind: self.kernel_kind,
            alphas: self.alphas.clone(),
            betas: self.betas.clone(),
            gamma_multipliers: self.gamma_multipliers.clone(),
            bandwidth_factors: self.bandwidth_factors.clone(),
            anchor_cap: self.anchor_cap,
            solver_tolerance: self.solver_tolerance,
            solver_max_iter: self.solver_max_iter,
            ridge_lambdas: self.ridge_lambdas.clone(),
            propensity_reg_grid: self.propensity.reg_grid.clone(),
            propensity_folds: self.propensity.folds,
            clip_cap: self.propensity.clip_cap,
        })
    }
}

/// Serialized fit output: the final model plus the selection trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub model: BoundModel,
    pub selection: SelectionResult,
    /// Hash of the run configuration that produced this artifact.
    pub config_hash: String,
    pub seed: u64,
    /// Covariate names in model column order.
    pub feature_names: Vec<String>,
    /// Per-covariate (mean, sd) used to standardize the training data;
    /// query points must be transformed with the same statistics.
    pub standardization: Option<Vec<(f64, f64)>>,
}

/// Write a value as pretty JSON, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a JSON value.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let config = RunConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let text = r#"{ "required_fcr": 0.01, "coupled": true }"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(config.required_fcr, 0.01);
        assert!(config.coupled);
        assert_eq!(config.loss, LossP::L2);
        config.validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut config = RunConfig::default();
        config.required_fcr = 0.0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default();
        config.seeds.clear();
        assert!(config.validate().is_err());
    }

    #[test]
    fn csv_source_rejected_for_benchmark() {
        let mut config = RunConfig::default();
        config.data = DataSource::Csv {
            path: PathBuf::from("data.csv"),
            schema: CsvSchema::default(),
        };
        assert!(config.to_benchmark().is_err());
        assert!(RunConfig::default().to_benchmark().is_ok());
    }

    #[test]
    fn synthetic_load_is_seeded_and_confounded() {
        let config = RunConfig::default();
        let a = config.load_dataset(7).unwrap();
        let b = config.load_dataset(7).unwrap();
        assert_eq!(a.y, b.y);
        let c = config.load_dataset(8).unwrap();
        assert_ne!(a.y, c.y);
        // confounding drops samples below the generator's nominal size
        assert!(a.n() < 3000);
    }

    #[test]
    fn json_artifact_helpers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/dir/config.json");
        let config = RunConfig::default();
        write_json(&path, &config).unwrap();
        let back: RunConfig = read_json(&path).unwrap();
        assert_eq!(config, back);
        let missing: Result<RunConfig> = read_json(&dir.path().join("absent.json"));
        assert!(missing.is_err());
    }
}
