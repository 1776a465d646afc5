use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tcen::data::SyntheticSpec;
use tcen::eval::BeamConfig;
use tcen::model::ModelConfig;
use tcen::pipeline::ExperimentConfig;
use tcen::training::StageConfig;
use tcen::transforms::NoiserConfig;

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.toml";

/// Everything needed to reproduce a run. Per-stage seeds are derived from
/// `seed`, so the echoed file reloads to the same values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub noise_k: f64,
    pub data: SyntheticSpec,
    pub model: ModelConfig,
    pub path_model: StageConfig,
    pub noiser: NoiserConfig,
    pub pretrain: StageConfig,
    pub finetune: StageConfig,
    pub beam: BeamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_experiment(1, ExperimentConfig::desk())
    }
}

impl RunConfig {
    fn from_experiment(seed: u64, e: ExperimentConfig) -> Self {
        let e = e.with_seed(seed);
        Self {
            seed,
            noise_k: e.noise_k,
            data: e.data,
            model: e.model,
            path_model: e.path_model,
            noiser: e.noiser,
            pretrain: e.pretrain,
            finetune: e.finetune,
            beam: e.beam,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            data: self.data.clone(),
            model: self.model.clone(),
            path_model: self.path_model.clone(),
            noiser: self.noiser.clone(),
            pretrain: self.pretrain.clone(),
            finetune: self.finetune.clone(),
            noise_k: self.noise_k,
            beam: self.beam,
        }
        .with_seed(self.seed)
    }

    /// Loads `path` (or the defaults), applies the seed override and
    /// re-derives the stage seeds.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str::<RunConfig>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let cfg = Self::from_experiment(cfg.seed, cfg.experiment());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.data.validate().map_err(|e| CliError::Usage(format!("data: {e}")))?;
        self.model.validate().map_err(|e| CliError::Usage(format!("model: {e}")))?;
        let expected = (self.data.feature_dim, self.data.vocab_size_src, self.data.vocab_size_trg + 3);
        let got = (self.model.feature_dim, self.model.src_words, self.model.trg_vocab);
        if expected != got {
            return Err(CliError::Usage(format!(
                "model: (feature_dim, src_words, trg_vocab) = {got:?} does not match data {expected:?}"
            )));
        }
        for (name, s) in [("path_model", &self.path_model), ("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            s.validate().map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
        }
        self.noiser.validate().map_err(|e| CliError::Usage(format!("noiser: {e}")))?;
        self.beam.validate().map_err(|e| CliError::Usage(format!("beam: {e}")))?;
        if !(0.0..=1.0).contains(&self.noise_k) {
            return Err(CliError::Usage(format!("noise_k must lie in [0, 1], got {}", self.noise_k)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Writes the resolved config into `dir`, creating it if needed.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}
