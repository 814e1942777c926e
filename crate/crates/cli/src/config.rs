//! Run configuration files.
//!
//! A config is a single JSON document; unknown keys anywhere are rejected so a
//! misspelled hyperparameter never silently falls back to its default.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rgsmc::model::RandomTabularParams;
use rgsmc::potential::PredicateDecl;
use rgsmc::{AutoregressiveModel, Family, PotentialDecl, Predicate, SmcConfig, TabularModel, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Path to a model file, relative to the config file.
    File(PathBuf),
    Random(RandomTabularParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDecl {
    pub family: Family,
    pub alpha: f64,
    pub horizon: usize,
    pub block_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Particles,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub label: String,
    pub model: ModelSource,
    #[serde(default)]
    pub prompt: String,
    pub potential: PotentialDecl,
    pub target: TargetDecl,
    /// Sampler settings; the seed lives at the top level.
    pub smc: SmcConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Task predicate for the success columns of the summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<PredicateDecl>,
}

fn one() -> usize {
    1
}

/// A validated config with its model and potential built.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub config: RunConfig,
    /// Model file contents (or the generated table) used for hashing.
    pub model_text: String,
    pub spec: TargetSpec,
    pub success: Option<Predicate>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let err = |message: String| CliError::Config {
            path: path.to_path_buf(),
            message,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| err(format!("invalid JSON: {e}")))?;
        if value.pointer("/smc/seed").is_some() {
            return Err(err("`smc.seed` is not allowed; set `seed` at the top level".into()));
        }
        // Parse the text rather than the value so errors carry line numbers.
        serde_json::from_str(text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, path)
    }

    /// Sweep values, or a single `None` point without a sweep.
    pub fn sweep_points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    /// Particle count and α at one sweep point.
    pub fn point_settings(&self, value: Option<f64>) -> (usize, f64) {
        match (self.sweep.as_ref().map(|s| s.axis), value) {
            (Some(SweepAxis::Particles), Some(v)) => (v as usize, self.target.alpha),
            (Some(SweepAxis::Alpha), Some(v)) => (self.smc.particles, v),
            _ => (self.smc.particles, self.target.alpha),
        }
    }
}

impl LoadedConfig {
    /// Parses, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let config = RunConfig::load(path)?;
        Self::from_config(config, path)
    }

    pub fn from_config(config: RunConfig, path: &Path) -> Result<Self, CliError> {
        let err = |message: String| CliError::Config {
            path: path.to_path_buf(),
            message,
        };
        let (model, model_text): (Arc<dyn AutoregressiveModel>, String) = match &config.model {
            ModelSource::File(file) => {
                let resolved = resolve(path, file);
                let text = fs::read_to_string(&resolved)
                    .map_err(|e| err(format!("model file {}: {e}", resolved.display())))?;
                let model =
                    TabularModel::parse(&text).map_err(|e| err(format!("model file {}: {e}", resolved.display())))?;
                (Arc::new(model), text)
            }
            ModelSource::Random(params) => {
                let model = TabularModel::random(params).map_err(|e| err(format!("random model: {e}")))?;
                let text = model.to_text();
                (Arc::new(model), text)
            }
        };
        let potential = config
            .potential
            .build(model.vocab())
            .map_err(|e| err(format!("potential: {e}")))?;
        let t = &config.target;
        let spec = TargetSpec::new(
            t.family,
            t.alpha,
            t.horizon,
            t.block_size,
            model,
            potential,
            config.prompt.clone(),
        )
        .map_err(|e| err(format!("target: {e}")))?;
        let success = config
            .success
            .as_ref()
            .map(|p| p.build(spec.model.vocab()))
            .transpose()
            .map_err(|e| err(format!("success predicate: {e}")))?;

        config.smc.validate().map_err(|e| err(format!("smc: {e}")))?;
        if let Some(sweep) = &config.sweep {
            if sweep.values.is_empty() {
                return Err(err("sweep needs at least one value".into()));
            }
            for &v in &sweep.values {
                match sweep.axis {
                    SweepAxis::Particles => {
                        if !(v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
                            return Err(err(format!("particle count {v} is not a positive integer")));
                        }
                        let mut smc = config.smc.clone();
                        smc.particles = v as usize;
                        smc.validate().map_err(|e| err(format!("smc at {v} particles: {e}")))?;
                    }
                    SweepAxis::Alpha => {
                        if !(v > 0.0 && v.is_finite()) {
                            return Err(err(format!("alpha {v} must be positive")));
                        }
                    }
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            config,
            model_text,
            spec,
            success,
        })
    }

    /// Target at one sweep point.
    pub fn spec_at(&self, alpha: f64) -> Result<TargetSpec, CliError> {
        if alpha == self.spec.alpha {
            return Ok(self.spec.clone());
        }
        let s = &self.spec;
        Ok(TargetSpec::new(
            s.family,
            alpha,
            s.horizon,
            s.block_size,
            s.model.clone(),
            s.potential.clone(),
            s.prompt.clone(),
        )?)
    }
}

fn resolve(config_path: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        return file.to_path_buf();
    }
    match config_path.parent() {
        Some(dir) => dir.join(file),
        None => file.to_path_buf(),
    }
}
