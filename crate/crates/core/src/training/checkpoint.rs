use std::path::{Path, PathBuf};

use super::{Adam, AdamConfig, AdamSlot, EvalRecord, StageConfig, StepRecord, StreamState, TrainingLog};
use crate::data::Task;
use crate::model::{ModelConfig, TcenModel};
use crate::numerics::{HasParams, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"TCENCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint holds parameter `{0}` which the model does not have")]
    UnknownParameter(String),
    #[error("checkpoint lacks parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{name}` has shape {found:?} in the checkpoint but {expected:?} in the model")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Position of a training run, enough to continue it bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub stage: StageConfig,
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub asr_stream: StreamState,
    pub st_stream: StreamState,
    pub log: TrainingLog,
}

/// Named parameters plus optional optimizer and trainer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<Adam>,
    pub trainer: Option<TrainerState>,
}

impl Checkpoint {
    pub fn from_model(model: &TcenModel) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            optimizer: None,
            trainer: None,
        }
    }

    /// Copies the stored values into a model with the same parameter names and shapes.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        for (name, value) in &self.params {
            let id = store.id(name).ok_or_else(|| CheckpointError::UnknownParameter(name.clone()))?;
            let target = &mut store.get_mut(id).value;
            if target.shape() != value.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: target.shape().to_vec(),
                    found: value.shape().to_vec(),
                });
            }
            *target = value.clone();
        }
        if store.len() != self.params.len() {
            let missing = store
                .iter()
                .map(|(_, p)| p.name.clone())
                .find(|n| !self.params.iter().any(|(m, _)| m == n))
                .unwrap_or_default();
            return Err(CheckpointError::MissingParameter(missing));
        }
        Ok(())
    }

    /// Rebuilds the model described by the stored config.
    pub fn restore_model(&self) -> Result<TcenModel, super::TrainError> {
        let mut model = TcenModel::new(self.config.clone(), 0)?;
        self.apply_to(model.params_mut())?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(&serde_json::to_string(&self.config).expect("config serializes"));
        w.u32(self.params.len() as u32);
        for (name, value) in &self.params {
            w.str(name);
            w.tensor(value);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(adam) => {
                w.u8(1);
                w.f64(adam.config.beta1);
                w.f64(adam.config.beta2);
                w.f64(adam.config.eps);
                w.u32(adam.slots.len() as u32);
                for s in &adam.slots {
                    w.u64(s.steps);
                    w.tensor(&s.m);
                    w.tensor(&s.v);
                }
            }
        }
        match &self.trainer {
            None => w.u8(0),
            Some(t) => {
                w.u8(1);
                w.str(&serde_json::to_string(&t.stage).expect("stage config serializes"));
                w.u64(t.step);
                w.bytes(&t.rng_seed);
                w.u64(t.rng_stream);
                w.u128(t.rng_word_pos);
                for s in [t.asr_stream, t.st_stream] {
                    w.u64(s.epoch);
                    w.u64(s.cursor);
                }
                w.u64(t.log.steps.len() as u64);
                for r in &t.log.steps {
                    w.u64(r.step as u64);
                    w.u8(Task::ALL.iter().position(|&x| x == r.task).expect("known task") as u8);
                    w.f64(r.loss);
                    w.f64(r.lrate);
                }
                w.u64(t.log.evals.len() as u64);
                for r in &t.log.evals {
                    w.u64(r.step as u64);
                    w.f64(r.dev_token_accuracy);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() || r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let found = r.u32()?;
        if found != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let config: ModelConfig = serde_json::from_str(&r.str()?)?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.str()?;
            params.push((name, r.tensor()?));
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let n = r.u32()? as usize;
                let mut slots = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    slots.push(AdamSlot {
                        steps: r.u64()?,
                        m: r.tensor()?,
                        v: r.tensor()?,
                    });
                }
                Some(Adam { config, slots })
            }
            f => return Err(CheckpointError::Corrupt(format!("optimizer flag {f}"))),
        };
        let trainer = match r.u8()? {
            0 => None,
            1 => {
                let stage: StageConfig = serde_json::from_str(&r.str()?)?;
                let step = r.u64()?;
                let rng_seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
                let rng_stream = r.u64()?;
                let rng_word_pos = r.u128()?;
                let mut streams = [StreamState::default(); 2];
                for s in &mut streams {
                    s.epoch = r.u64()?;
                    s.cursor = r.u64()?;
                }
                let mut log = TrainingLog::default();
                for _ in 0..r.u64()? {
                    let step = r.u64()? as usize;
                    let task = *Task::ALL
                        .get(r.u8()? as usize)
                        .ok_or_else(|| CheckpointError::Corrupt("task tag".into()))?;
                    log.steps.push(StepRecord {
                        step,
                        task,
                        loss: r.f64()?,
                        lrate: r.f64()?,
                    });
                }
                for _ in 0..r.u64()? {
                    log.evals.push(EvalRecord {
                        step: r.u64()? as usize,
                        dev_token_accuracy: r.f64()?,
                    });
                }
                Some(TrainerState {
                    stage,
                    step,
                    rng_seed,
                    rng_stream,
                    rng_word_pos,
                    asr_stream: streams[0],
                    st_stream: streams[1],
                    log,
                })
            }
            f => return Err(CheckpointError::Corrupt(format!("trainer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            params,
            optimizer,
            trainer,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u64()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Corrupt("string is not UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt(format!("tensor with {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or(CheckpointError::Truncated)?;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
}
