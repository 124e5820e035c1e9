//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simpost_core::feature_maps::KernelFamily;
use simpost_core::simulators::{model_by_name, ControllerSpec, GenerativeModel, MAX_HORIZON};
use simpost_core::{PriorSpec, TrainerConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MdnRff,
    MdnNn,
    RejectionAbc,
    /// RFF model trained on shuffled `(θ, x)` pairs.
    ShuffledControl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::MdnRff => "mdn_rff",
            Method::MdnNn => "mdn_nn",
            Method::RejectionAbc => "rejection_abc",
            Method::ShuffledControl => "shuffled_control",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Rff,
    Nn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub kind: FeatureKind,
    pub family: KernelFamily,
    pub num_features: usize,
    /// Cross-validated when more than one is given.
    pub lengthscales: Vec<f64>,
    pub folds: usize,
    pub hidden: usize,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Rff,
            family: KernelFamily::Rbf,
            num_features: 200,
            lengthscales: vec![1.0],
            folds: 3,
            hidden: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbcSettings {
    /// Target acceptance rate; `epsilon` is the matching distance quantile
    /// over the training set.
    pub acceptance: f64,
    /// Fresh simulations per run; the dataset size when absent.
    pub max_simulations: Option<usize>,
}

impl Default for AbcSettings {
    fn default() -> Self {
        Self {
            acceptance: 0.02,
            max_simulations: None,
        }
    }
}

fn default_horizon() -> usize {
    MAX_HORIZON
}

fn default_real_rollouts() -> usize {
    10
}

fn default_repeats() -> usize {
    5
}

fn default_methods() -> Vec<Method> {
    vec![Method::MdnRff, Method::MdnNn, Method::RejectionAbc, Method::ShuffledControl]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    /// Inferred parameters; the rest stay at schema defaults.
    pub params: Vec<String>,
    pub prior: PriorSpec,
    /// The prior when absent.
    #[serde(default)]
    pub proposal: Option<PriorSpec>,
    pub controller: ControllerSpec,
    pub dataset_size: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Hidden parameters used to synthesize the "real" observation.
    #[serde(default)]
    pub true_params: Option<Vec<f64>>,
    /// Recorded trajectories CSV used instead of synthesizing.
    #[serde(default)]
    pub real_trajectories: Option<PathBuf>,
    #[serde(default = "default_real_rollouts")]
    pub real_rollouts: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub features: FeatureSettings,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub abc: AbcSettings,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// The fields that determine the generated dataset.
#[derive(Serialize)]
struct GenerationSection<'a> {
    benchmark: &'a str,
    params: &'a [String],
    proposal: &'a PriorSpec,
    controller: &'a ControllerSpec,
    dataset_size: usize,
    horizon: usize,
    seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn proposal(&self) -> &PriorSpec {
        self.proposal.as_ref().unwrap_or(&self.prior)
    }

    pub fn model(&self) -> Result<Box<dyn GenerativeModel>> {
        Ok(model_by_name(&self.benchmark)?)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        if self.params.is_empty() {
            return Err(CliError::Config("no parameters to infer".into()));
        }
        for name in &self.params {
            model.schema().index_of(name)?;
        }
        for spec in [&self.prior, self.proposal()] {
            spec.validate()?;
            if let Some(d) = spec.dim() {
                if d != self.params.len() {
                    return Err(CliError::Config(format!(
                        "prior has {d} dimensions but {} parameters are inferred",
                        self.params.len()
                    )));
                }
            }
        }
        if matches!(self.proposal(), PriorSpec::Improper) {
            return Err(CliError::Config("the proposal must be samplable".into()));
        }
        self.trainer.validate()?;
        if self.dataset_size < 10 * self.trainer.components {
            return Err(CliError::Config(format!(
                "dataset_size {} is below 10 × {} components",
                self.dataset_size, self.trainer.components
            )));
        }
        if self.horizon < 2 || self.horizon > model.max_horizon() {
            return Err(CliError::Config(format!("horizon {} outside 2..={}", self.horizon, model.max_horizon())));
        }
        if let Some(t) = &self.true_params {
            if t.len() != self.params.len() {
                return Err(CliError::Config("true_params length differs from params".into()));
            }
        }
        if self.real_rollouts == 0 || self.repeats == 0 {
            return Err(CliError::Config("real_rollouts and repeats must be >= 1".into()));
        }
        let f = &self.features;
        if f.lengthscales.is_empty() || f.lengthscales.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(CliError::Config("lengthscales must be non-empty and positive".into()));
        }
        if f.num_features == 0 || f.num_features % 2 == 1 || f.hidden == 0 {
            return Err(CliError::Config("num_features must be even and positive, hidden positive".into()));
        }
        if !(self.abc.acceptance > 0.0 && self.abc.acceptance <= 1.0)  {
            return Err(CliError::Config("abc.acceptance must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the generation section, embedded in every artifact.
    pub fn data_hash(&self) -> String {
        let section = GenerationSection {
            benchmark: &self.benchmark,
            params: &self.params,
            proposal: self.proposal(),
            controller: &self.controller,
            dataset_size: self.dataset_size,
            horizon: self.horizon,
            seed: self.seed,
        };
        let bytes = serde_json::to_vec(&section).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PENDULUM: &str = r#"
benchmark = "pendulum"
params = ["dt"]
dataset_size = 100
true_params = [0.1]

[prior]
kind = "uniform_box"
low = [0.01]
high = [0.3]

[controller]
kind = "random_uniform"
seed = 1
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str(PENDULUM).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.horizon, 200);
        assert_eq!(cfg.repeats, 5);
        assert_eq!(cfg.real_rollouts, 10);
        assert_eq!(cfg.trainer.components, 5);
        assert_eq!(cfg.proposal(), &cfg.prior);
        assert_eq!(cfg.methods.len(), 4);
    }

    #[test]
    fn hash_tracks_generation_fields_only() {
        let a: ExperimentConfig = toml::from_str(PENDULUM).unwrap();
        let mut b = a.clone();
        b.trainer.epochs = 3;
        assert_eq!(a.data_hash(), b.data_hash());
        b.seed = 9;
        assert_ne!(a.data_hash(), b.data_hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg: ExperimentConfig = toml::from_str(PENDULUM).unwrap();
        cfg.params = vec!["gravity".into()];
        assert!(cfg.validate().is_err());
        let mut cfg: ExperimentConfig = toml::from_str(PENDULUM).unwrap();
        cfg.dataset_size = 20;
        assert!(cfg.validate().is_err());
        assert!(toml::from_str::<ExperimentConfig>(&format!("{PENDULUM}\nbogus = 1")).is_err());
    }
}
