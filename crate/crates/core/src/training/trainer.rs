use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    clip_gradients, lrate, sample_task, Adam, Checkpoint, Corpora, EvalRecord, StageConfig, StepRecord, TrainError,
    TrainerState, TrainingLog,
};
use crate::data::{batchify, AsrRecord, Batch, MtRecord, StRecord, Task};
use crate::eval::token_accuracy;
use crate::model::{Mode, TcenModel};
use crate::numerics::{HasParams, Tape};
use crate::transforms::{mix_corpora, MixSampler};

/// Position inside an epoch-ordered batch stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamState {
    pub epoch: u64,
    pub cursor: u64,
}

/// Length-bucketed batches, reshuffled every epoch from `(seed, epoch)` alone.
#[derive(Clone, Debug)]
struct EpochStream {
    seed: u64,
    lengths: Vec<usize>,
    batch_size: usize,
    state: StreamState,
    order: Vec<Vec<usize>>,
}

impl EpochStream {
    fn new(seed: u64, lengths: Vec<usize>, batch_size: usize, state: StreamState) -> Self {
        let mut s = Self {
            seed,
            lengths,
            batch_size,
            state,
            order: Vec::new(),
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.state.epoch);
        self.order = batchify(&self.lengths, self.batch_size, &mut rng);
    }

    fn next(&mut self) -> &[usize] {
        if self.state.cursor as usize >= self.order.len() {
            self.state.epoch += 1;
            self.state.cursor = 0;
            self.shuffle();
        }
        self.state.cursor += 1;
        &self.order[self.state.cursor as usize - 1]
    }
}

/// One training stage in progress.
pub struct Trainer<'c> {
    model: TcenModel,
    cfg: StageConfig,
    corpora: &'c Corpora,
    adam: Adam,
    rng: ChaCha8Rng,
    asr: EpochStream,
    st: EpochStream,
    mix: Option<MixSampler<'c>>,
    step: usize,
    log: TrainingLog,
}

fn stream_seed(seed: u64, which: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(which)
}

impl<'c> Trainer<'c> {
    pub fn new(model: TcenModel, corpora: &'c Corpora, cfg: StageConfig) -> Result<Self, TrainError> {
        let adam = Adam::new(cfg.adam, model.params());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::assemble(model, corpora, cfg, adam, rng, StreamState::default(), StreamState::default(), 0, TrainingLog::default())
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, corpora: &'c Corpora) -> Result<Self, TrainError> {
        let state = ckpt
            .trainer
            .as_ref()
            .ok_or_else(|| TrainError::Config("checkpoint has no trainer state".into()))?;
        let adam = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| TrainError::Config("checkpoint has no optimizer state".into()))?;
        let model = ckpt.restore_model()?;
        let mut rng = ChaCha8Rng::from_seed(state.rng_seed);
        rng.set_stream(state.rng_stream);
        rng.set_word_pos(state.rng_word_pos);
        Self::assemble(
            model,
            corpora,
            state.stage.clone(),
            adam,
            rng,
            state.asr_stream,
            state.st_stream,
            state.step as usize,
            state.log.clone(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: TcenModel,
        corpora: &'c Corpora,
        cfg: StageConfig,
        adam: Adam,
        rng: ChaCha8Rng,
        asr_state: StreamState,
        st_state: StreamState,
        step: usize,
        log: TrainingLog,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        for task in cfg.ratios.active() {
            if !model.config().supports(task) {
                return Err(TrainError::Model(crate::model::ModelError::UnsupportedTask {
                    architecture: model.config().architecture,
                    task,
                }));
            }
            let empty = match task {
                Task::Asr => corpora.asr.is_empty(),
                Task::Mt => corpora.mt.is_empty() && cfg.noise.k < 1.0,
                Task::St => corpora.st.is_empty(),
            };
            if empty {
                return Err(TrainError::MissingCorpus { task, corpus: task.name() });
            }
        }
        if cfg.eval_every > 0 && corpora.dev.is_empty() {
            return Err(TrainError::MissingCorpus {
                task: Task::St,
                corpus: "dev",
            });
        }
        let mix = if cfg.ratios.mt > 0.0 {
            Some(mix_corpora(&corpora.mt, &corpora.mt_noisy, cfg.noise)?)
        } else {
            None
        };
        let asr_lengths = corpora.asr.iter().map(|r| r.frames.len()).collect();
        let st_lengths = corpora.st.iter().map(|r| r.frames.len()).collect();
        Ok(Self {
            asr: EpochStream::new(stream_seed(cfg.seed, 1), asr_lengths, cfg.batch_size, asr_state),
            st: EpochStream::new(stream_seed(cfg.seed, 2), st_lengths, cfg.batch_size, st_state),
            model,
            cfg,
            corpora,
            adam,
            rng,
            mix,
            step,
            log,
        })
    }

    pub fn model(&self) -> &TcenModel {
        &self.model
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &StageConfig {
        &self.cfg
    }

    pub fn into_parts(self) -> (TcenModel, TrainingLog) {
        (self.model, self.log)
    }

    fn draw(&mut self, task: Task) -> Batch {
        let corpora = self.corpora;
        match task {
            Task::Asr => {
                let refs: Vec<&AsrRecord> = self.asr.next().iter().map(|&i| &corpora.asr[i]).collect();
                Batch::asr(&refs)
            }
            Task::St => {
                let refs: Vec<&StRecord> = self.st.next().iter().map(|&i| &corpora.st[i]).collect();
                Batch::st(&refs)
            }
            Task::Mt => {
                let mix = self.mix.expect("validated at stage start");
                let refs: Vec<&MtRecord> = (0..self.cfg.batch_size).map(|_| mix.draw(&mut self.rng).0).collect();
                Batch::mt(&refs)
            }
        }
    }

    /// Dev accuracy of the current parameters, appended to the log.
    pub fn evaluate(&mut self) -> Result<f64, TrainError> {
        let acc = token_accuracy(&self.model, &self.corpora.dev, self.cfg.batch_size)?;
        self.log.evals.push(EvalRecord {
            step: self.step,
            dev_token_accuracy: acc,
        });
        Ok(acc)
    }

    /// Sample a task, draw its batch, and take one clipped Adam step.
    pub fn train_step(&mut self) -> Result<StepRecord, TrainError> {
        let n = self.step + 1;
        let task = sample_task(&self.cfg.ratios, &mut self.rng)?;
        let batch = self.draw(task);
        let lr = lrate(n, &self.cfg.schedule)?;
        self.model.params_mut().zero_grads();
        let mut tape = Tape::new();
        let out = self
            .model
            .task_loss(&mut tape, &batch, &mut Mode::train(self.cfg.dropout, &mut self.rng))?;
        if let Some(loss) = out.loss {
            tape.backward(loss, self.model.params_mut())?;
            clip_gradients(self.model.params_mut(), self.cfg.clip_norm)?;
            self.adam.update(self.model.params_mut(), lr)?;
        }
        self.step = n;
        let record = StepRecord {
            step: n,
            task,
            loss: out.value,
            lrate: lr,
        };
        self.log.steps.push(record);
        if self.cfg.eval_every > 0 && (n % self.cfg.eval_every == 0 || n == self.cfg.steps) {
            self.evaluate()?;
        }
        Ok(record)
    }

    /// Trains until `steps` steps have been taken (capped by the stage length).
    pub fn run_until(&mut self, steps: usize) -> Result<(), TrainError> {
        let target = steps.min(self.cfg.steps);
        if self.step == 0 && target > 0 && self.cfg.eval_every > 0 && self.log.evals.is_empty() {
            self.evaluate()?;
        }
        while self.step < target {
            self.train_step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<(), TrainError> {
        self.run_until(self.cfg.steps)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_model(&self.model);
        ckpt.optimizer = Some(self.adam.clone());
        ckpt.trainer = Some(TrainerState {
            stage: self.cfg.clone(),
            step: self.step as u64,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            asr_stream: self.asr.state,
            st_stream: self.st.state,
            log: self.log.clone(),
        });
        ckpt
    }
}

/// Runs a whole stage and returns the trained model with its log.
pub fn train_stage(model: TcenModel, corpora: &Corpora, cfg: &StageConfig) -> Result<(TcenModel, TrainingLog), TrainError> {
    let mut trainer = Trainer::new(model, corpora, cfg.clone())?;
    trainer.run()?;
    Ok(trainer.into_parts())
}
