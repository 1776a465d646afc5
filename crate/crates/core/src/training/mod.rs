//! Two-stage multi-task training: task sampling, the learning-rate schedule,
//! clipping, Adam, checkpoints and logs.

mod checkpoint;
mod log;
mod optim;
mod schedule;
mod trainer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainerState, FORMAT_VERSION};
pub use log::{EvalRecord, StepRecord, TrainingLog};
pub use optim::{clip_gradients, Adam, AdamConfig, AdamSlot};
pub use schedule::{lrate, sample_task, ScheduleConfig, TaskRatios};
pub use trainer::{train_stage, StreamState, Trainer};

use crate::data::{AsrRecord, MtRecord, StRecord, Task};
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::transforms::{NoiseMixConfig, TransformError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training config: {0}")]
    Config(String),
    #[error("learning-rate step must be at least 1, got {0}")]
    Step(usize),
    #[error("non-finite gradient {value} in `{param}`")]
    NonFiniteGradient { param: String, value: f64 },
    #[error("no {corpus} corpus for the {task} task")]
    MissingCorpus { task: Task, corpus: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Transform(#[from] Box<TransformError>),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<TransformError> for TrainError {
    fn from(e: TransformError) -> Self {
        Self::Transform(Box::new(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// CTC on the transcribed speech plus MT; no ST.
    Pretrain,
    /// Joint ST, ASR and MT.
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    pub ratios: TaskRatios,
    pub steps: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Dev accuracy is measured at step 0, every `eval_every` steps and at the end; 0 disables it.
    pub eval_every: usize,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Share of MT draws taken from the noisy corpus.
    #[serde(default = "no_noise")]
    pub noise: NoiseMixConfig,
}

fn no_noise() -> NoiseMixConfig {
    NoiseMixConfig { k: 0.0 }
}

impl StageConfig {
    pub fn desk(stage: Stage, d_model: usize) -> Self {
        Self {
            stage,
            ratios: match stage {
                Stage::Pretrain => TaskRatios::pretrain(),
                Stage::Finetune => TaskRatios::finetune(),
            },
            steps: 3000,
            batch_size: 16,
            clip_norm: 5.0,
            dropout: 0.1,
            seed: 1,
            eval_every: 100,
            schedule: ScheduleConfig {
                scale_k: 2.0,
                d_model,
                warmup_n: 400,
            },
            adam: AdamConfig::default(),
            noise: no_noise(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.ratios.validate()?;
        self.schedule.validate()?;
        self.noise.validate()?;
        match self.stage {
            Stage::Pretrain if self.ratios.st > 0.0 => {
                return Err(TrainError::Config("pre-training samples only ASR and MT".into()));
            }
            Stage::Finetune if self.ratios.st <= 0.0 => {
                return Err(TrainError::Config("fine-tuning needs a positive ST ratio".into()));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Training data for every task; corpora a stage does not sample may be empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpora {
    pub asr: Vec<AsrRecord>,
    pub mt: Vec<MtRecord>,
    /// MT pairs whose sources were replaced by noised CTC paths.
    pub mt_noisy: Vec<MtRecord>,
    pub st: Vec<StRecord>,
    pub dev: Vec<StRecord>,
}
