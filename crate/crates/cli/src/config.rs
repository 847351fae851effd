use std::path::{Path, PathBuf};

use conflict_intensity::data::ColumnMap;
use conflict_intensity::infer::SamplerConfig;
use conflict_intensity::model::Hyperparams;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming a config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "CONFLICT_INTENSITY_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mu: f64,
    pub sigma: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// One entry per class; all ones when absent.
    pub alpha_z: Option<Vec<f64>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mu: -1.0,
            sigma: 1.0,
            gamma_shape: 1.0,
            gamma_rate: 1.0,
            alpha_z: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub draws: usize,
    pub warmup: usize,
    pub chains: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            draws: d.draws,
            warmup: d.warmup,
            chains: d.chains,
            target_accept: d.target_accept,
            max_tree_depth: d.max_tree_depth,
        }
    }
}

/// Everything a run needs besides file paths. Loaded from TOML or JSON,
/// then overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: usize,
    pub workers: Option<usize>,
    pub prior: PriorConfig,
    pub sampler: SamplerSection,
    /// Input column names for `ingest`.
    pub columns: ColumnMap,
    /// JSON file overriding the built-in actor and Goldstein tables.
    pub mapping: Option<PathBuf>,
    /// Training share of the seeded split used by `impute` and `select-c`.
    pub train_fraction: f64,
    /// Class counts swept by `select-c`.
    pub class_range: Vec<usize>,
    /// Fits per class count in `select-c`.
    pub selection_seeds: usize,
    pub folds: usize,
    pub max_lag: usize,
    /// Events drawn by `simulate`.
    pub events: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 5,
            workers: None,
            prior: PriorConfig::default(),
            sampler: SamplerSection::default(),
            columns: ColumnMap::default(),
            mapping: None,
            train_fraction: 0.7,
            class_range: vec![3, 4, 5, 6, 7],
            selection_seeds: 3,
            folds: 24,
            max_lag: 6,
            events: 2000,
        }
    }
}

impl RunConfig {
    /// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// The file named by `explicit`, else by the environment, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn hyper(&self) -> Result<Hyperparams, CliError> {
        self.hyper_with(self.classes)
    }

    pub fn hyper_with(&self, classes: usize) -> Result<Hyperparams, CliError> {
        let mut h = Hyperparams::new(classes)?;
        h.mu = self.prior.mu;
        h.sigma = self.prior.sigma;
        h.gamma_shape = self.prior.gamma_shape;
        h.gamma_rate = self.prior.gamma_rate;
        if let Some(a) = &self.prior.alpha_z {
            h.alpha_z = a.clone();
        }
        h.validate()?;
        Ok(h)
    }

    pub fn sampler(&self) -> Result<SamplerConfig, CliError> {
        let s = SamplerConfig {
            draws: self.sampler.draws,
            warmup: self.sampler.warmup,
            chains: self.sampler.chains,
            target_accept: self.sampler.target_accept,
            max_tree_depth: self.sampler.max_tree_depth,
            seed: self.seed,
            workers: self.workers,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.class_range.is_empty() {
            return Err(CliError::Config("class_range must not be empty".into()));
        }
        if self.selection_seeds == 0 || self.folds == 0 || self.max_lag == 0 || self.events == 0 {
            return Err(CliError::Config(
                "selection_seeds, folds, max_lag and events must be positive".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        self.hyper()?;
        self.sampler()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml_and_json() {
        let mut c = RunConfig {
            seed: 42,
            mapping: Some("tables.json".into()),
            ..RunConfig::default()
        };
        c.prior.alpha_z = Some(vec![2.0; 5]);
        assert_eq!(toml::from_str::<RunConfig>(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(
            serde_json::from_str::<RunConfig>(&serde_json::to_string(&c).unwrap()).unwrap(),
            c
        );
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("classes = 3\n[sampler]\ndraws = 50\n").unwrap();
        assert_eq!(c.classes, 3);
        assert_eq!(c.sampler.draws, 50);
        assert_eq!(c.sampler.warmup, 200);
        assert_eq!(c.folds, 24);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("clases = 3\n").is_err());
    }

    #[test]
    fn bad_values_fail_validation() {
        let c = RunConfig {
            train_fraction: 1.5,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            classes: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
