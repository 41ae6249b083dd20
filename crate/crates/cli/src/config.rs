use std::path::Path;

use exceed::estimators::NelderMeadSettings;
use exceed::nbe::{InputTransform, LossSpace, PriorSpec, TrainConfig};
use exceed::sinkhorn::SinkhornConfig;
use exceed::{Bounds, ModelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Run configuration read from TOML (`.toml`) or JSON (anything else).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: Option<ModelSpec>,
    /// Parameter box for the estimators; defaults to the prior support.
    pub bounds: Option<Bounds>,
    pub prior: Option<PriorSpec>,
    pub sinkhorn: SinkhornConfig,
    pub aw: AwSection,
    pub train: TrainSection,
    pub gof: GofSection,
    pub diagnostics: DiagnosticsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AwSection {
    /// Penalty weight; `1/n` when absent.
    pub lambda: Option<f64>,
    /// Simulated sample size; the observed size when absent.
    pub m: Option<usize>,
    pub multistart: usize,
    pub optimizer: NelderMeadSettings,
}

impl Default for AwSection {
    fn default() -> Self {
        Self { lambda: None, m: None, multistart: 1, optimizer: NelderMeadSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub sample_size: usize,
    pub training_sets: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossSpace,
    pub hidden: usize,
    pub input_transform: InputTransform,
}

impl Default for TrainSection {
    fn default() -> Self {
        let fit = TrainConfig::default();
        Self {
            sample_size: fit.sample_size,
            training_sets: fit.training_sets,
            epochs: fit.epochs,
            batch_size: fit.batch_size,
            learning_rate: fit.learning_rate,
            loss: fit.loss,
            hidden: 64,
            input_transform: InputTransform::Identity,
        }
    }
}

impl TrainSection {
    pub fn fit(&self) -> TrainConfig {
        TrainConfig {
            sample_size: self.sample_size,
            training_sets: self.training_sets,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            loss: self.loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GofSection {
    pub replicates: usize,
    pub m: Option<usize>,
}

impl Default for GofSection {
    fn default() -> Self {
        Self { replicates: 99, m: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub n_ref: Option<usize>,
    pub epsilon: f64,
    pub m: Option<usize>,
    /// Bootstrap replicates for pointwise bands; 0 disables them.
    pub band_replicates: usize,
    pub band_level: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { n_ref: None, epsilon: exceed::diagnostics::DIAGNOSTIC_EPSILON, m: None, band_replicates: 0, band_level: 0.95 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn model(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Config("config has no [model] section".into()))
    }

    pub fn prior(&self) -> Result<&PriorSpec, CliError> {
        self.prior.as_ref().ok_or_else(|| CliError::Config("config has no [prior] section".into()))
    }

    pub fn bounds(&self) -> Result<Bounds, CliError> {
        match (&self.bounds, &self.prior) {
            (Some(b), _) => Ok(Bounds::new(b.lower.clone(), b.upper.clone())?),
            (None, Some(p)) => Ok(p.support()),
            (None, None) => Err(CliError::Config("config needs [bounds] or [prior] to bound the parameters".into())),
        }
    }

    /// Digest of the effective configuration, flag overrides included.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
