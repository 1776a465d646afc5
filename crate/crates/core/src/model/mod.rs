//! The tandem encoder network and the two baselines built from the same parts.

pub(crate) mod layers;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss_batch, CtcError};
use crate::data::{Batch, PaddedFrames, PaddedTokens, TargetBatch, Task};
use crate::numerics::{HasParams, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

pub use layers::AttnMemory;
use layers::{Attention, BiLstm, Linear, LstmCell, LstmState};

/// Frames merged into one encoder step by the front-end.
pub const DOWNSAMPLE: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error("{architecture:?} model does not support the {task} task")]
    UnsupportedTask { architecture: Architecture, task: Task },
    #[error("batch does not match the {task} schema: missing {missing}")]
    Schema { task: Task, missing: &'static str },
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch { what: &'static str, expected: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Speech encoder feeding the text encoder; CTC matrix shared with the source embedding.
    Tcen,
    /// Multi-task baseline: an attentional transcript decoder on the speech encoder for ASR,
    /// MT on the text encoder, and ST from the speech encoder straight into the shared
    /// decoder with its own attention.
    ManyToMany,
    /// Speech encoder and decoder trained on ST only.
    Vanilla,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Share one matrix between the CTC classifier and the source embedding.
    /// Only meaningful for [`Architecture::Tcen`].
    pub tie_weights: bool,
    pub feature_dim: usize,
    /// Source words, excluding the blank.
    pub src_words: usize,
    /// Target vocabulary size including `<pad>`, `<bos>`, `<eos>`.
    pub trg_vocab: usize,
    pub d_model: usize,
    pub att_dim: usize,
    pub enc_s_layers: usize,
    pub enc_t_layers: usize,
    pub dec_layers: usize,
}

impl ModelConfig {
    /// CPU-scale defaults: two layers of 64 units everywhere.
    pub fn desk(feature_dim: usize, src_words: usize, trg_vocab: usize) -> Self {
        Self {
            architecture: Architecture::Tcen,
            tie_weights: true,
            feature_dim,
            src_words,
            trg_vocab,
            d_model: 64,
            att_dim: 64,
            enc_s_layers: 2,
            enc_t_layers: 2,
            dec_layers: 2,
        }
    }

    /// Dimensions of the full-size system (five bidirectional layers of 1024 units in the speech encoder).
    pub fn full_scale(feature_dim: usize, src_words: usize, trg_vocab: usize) -> Self {
        Self {
            d_model: 1024,
            att_dim: 1024,
            enc_s_layers: 5,
            enc_t_layers: 2,
            dec_layers: 2,
            ..Self::desk(feature_dim, src_words, trg_vocab)
        }
    }

    pub fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(ModelError::Config(format!("d_model must be positive and even, got {}", self.d_model)));
        }
        let positive = [
            ("feature_dim", self.feature_dim),
            ("src_words", self.src_words),
            ("att_dim", self.att_dim),
            ("enc_s_layers", self.enc_s_layers),
            ("dec_layers", self.dec_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.trg_vocab < 4 {
            return Err(ModelError::Config("target vocabulary needs at least one word".into()));
        }
        if self.architecture != Architecture::Vanilla && self.enc_t_layers == 0 {
            return Err(ModelError::Config("enc_t_layers must be positive".into()));
        }
        Ok(())
    }

    /// Blank id, which is also the number of source words.
    pub fn blank(&self) -> usize {
        self.src_words
    }

    pub fn is_tied(&self) -> bool {
        self.architecture == Architecture::Tcen && self.tie_weights
    }

    pub fn supports(&self, task: Task) -> bool {
        task == Task::St || self.architecture != Architecture::Vanilla
    }
}

/// Dropout setting for a forward pass.
pub struct Mode<'a> {
    dropout: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Mode<'a> {
    pub fn eval() -> Self {
        Self { dropout: 0.0, rng: None }
    }

    pub fn train(dropout: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            dropout,
            rng: Some(rng),
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub(crate) fn dropout(&mut self, tape: &mut Tape, v: Var) -> Result<Var, NumericsError> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => tape.dropout(v, self.dropout, true, rng),
            _ => Ok(v),
        }
    }
}

/// Time-major encoder states: row `t * batch + b` is step `t` of example `b`.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub states: Var,
    pub lengths: Vec<usize>,
    pub steps: usize,
}

impl EncoderOutput {
    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    /// Repeats a single-example output `n` times along the batch.
    pub fn repeat(&self, tape: &mut Tape, n: usize) -> Result<Self, ModelError> {
        if self.batch() != 1 {
            return Err(ModelError::DimMismatch {
                what: "repeated encoder batch",
                expected: 1,
                got: self.batch(),
            });
        }
        let dim = tape.value(self.states).cols();
        let mut idx = Vec::with_capacity(self.steps * n * dim);
        for t in 0..self.steps {
            for _ in 0..n {
                idx.extend(t * dim..(t + 1) * dim);
            }
        }
        Ok(Self {
            states: tape.gather(self.states, idx, vec![self.steps * n, dim])?,
            lengths: vec![self.lengths[0]; n],
            steps: self.steps,
        })
    }
}

/// Attention memory bound to the attention module that produced it.
#[derive(Clone, Debug)]
pub struct DecoderMemory {
    pub attn: AttnMemory,
    which: usize,
}

/// Per-layer recurrent state of the decoder; `None` is the zero state.
#[derive(Clone, Debug)]
pub struct DecoderState {
    layers: Vec<Option<LstmState>>,
}

impl DecoderState {
    /// Top-layer output `z`, if nonzero.
    pub fn top(&self) -> Option<Var> {
        self.layers.last().and_then(|s| s.map(|s| s.h))
    }

    /// Reorders (and possibly duplicates) batch rows.
    pub fn select(&self, tape: &mut Tape, rows: &[usize]) -> Result<Self, ModelError> {
        let mut pick = |v: Var| -> Result<Var, NumericsError> {
            let cols = tape.value(v).cols();
            let idx = rows.iter().flat_map(|&r| r * cols..(r + 1) * cols).collect();
            tape.gather(v, idx, vec![rows.len(), cols])
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for s in &self.layers {
            layers.push(match s {
                Some(s) => Some(LstmState {
                    h: pick(s.h)?,
                    c: pick(s.c)?,
                }),
                None => None,
            });
        }
        Ok(Self { layers })
    }
}

/// Result of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// `-(sum of gold log-probs) / tokens`.
    pub loss: Var,
    pub tokens: usize,
    /// Number of non-pad positions whose argmax equals the gold token.
    pub correct: usize,
}

/// Value of a task loss on one batch.
#[derive(Clone, Debug)]
pub struct TaskLoss {
    /// `None` when every example was skipped.
    pub loss: Option<Var>,
    pub value: f64,
    /// CTC examples whose downsampled length was too short for their transcript.
    pub skipped: Vec<usize>,
}

/// How many times the shared text encoder and decoder step have run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub text_encode: usize,
    pub decode_step: usize,
}

#[derive(Debug, Default)]
struct Counters {
    text_encode: AtomicUsize,
    decode_step: AtomicUsize,
}

#[derive(Debug)]
pub struct TcenModel {
    config: ModelConfig,
    params: ParamStore,
    enc_pre: Linear,
    enc_s: BiLstm,
    enc_t: Option<BiLstm>,
    src_embed: Option<ParamId>,
    ctc_proj: Option<ParamId>,
    attentions: Vec<Attention>,
    dec: DecoderNet,
    /// Transcript decoder of the many-to-many baseline.
    asr_dec: Option<DecoderNet>,
    counters: Counters,
}

/// Token embedding, recurrent stack and output layer of an attentional decoder.
#[derive(Clone, Debug)]
struct DecoderNet {
    embed: ParamId,
    cells: Vec<LstmCell>,
    out: Linear,
    vocab: usize,
}

impl DecoderNet {
    fn new<R: rand::Rng>(p: &mut ParamStore, rng: &mut R, prefix: &str, cfg: &ModelConfig, inputs: usize, outputs: usize) -> Result<Self, ModelError> {
        let d = cfg.d_model;
        let embed = p.add_uniform(&format!("{prefix}embed"), &[inputs, d], rng)?;
        let cells = (0..cfg.dec_layers)
            .map(|l| LstmCell::new(p, rng, &format!("{prefix}dec.l{l}"), if l == 0 { 2 * d } else { d }, d))
            .collect::<Result<Vec<_>, _>>()?;
        let out = Linear::new(p, rng, &format!("{prefix}out_proj"), d, outputs, true)?;
        Ok(Self {
            embed,
            cells,
            out,
            vocab: outputs,
        })
    }
}

impl Clone for TcenModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            enc_pre: self.enc_pre.clone(),
            enc_s: self.enc_s.clone(),
            enc_t: self.enc_t.clone(),
            src_embed: self.src_embed,
            ctc_proj: self.ctc_proj,
            attentions: self.attentions.clone(),
            dec: self.dec.clone(),
            asr_dec: self.asr_dec.clone(),
            counters: Counters::default(),
        }
    }
}

impl HasParams for TcenModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

const MT_ATTENTION: usize = 0;
const ST_ATTENTION: usize = 1;
const ASR_ATTENTION: usize = 2;

impl TcenModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut p = ParamStore::new();
        let d = config.d_model;
        let arch = config.architecture;
        let enc_pre = Linear::new(&mut p, rng, "enc_pre", DOWNSAMPLE * config.feature_dim, d, true)?;
        let enc_s = BiLstm::new(&mut p, rng, "enc_s", d, d, config.enc_s_layers)?;
        let (enc_t, src_embed, ctc_proj) = match arch {
            Architecture::Vanilla => (None, None, None),
            _ => {
                let enc_t = BiLstm::new(&mut p, rng, "enc_t", d, d, config.enc_t_layers)?;
                let embed = p.add_uniform("src_embed", &[config.src_words + 1, d], rng)?;
                let ctc = match arch {
                    Architecture::ManyToMany => None,
                    _ if config.is_tied() => Some(embed),
                    _ => Some(p.add_uniform("ctc_proj", &[config.src_words + 1, d], rng)?),
                };
                (Some(enc_t), Some(embed), ctc)
            }
        };
        let trg_embed = p.add_uniform("trg_embed", &[config.trg_vocab, d], rng)?;
        let mut attentions = vec![Attention::new(&mut p, rng, "att", d, config.att_dim)?];
        if arch == Architecture::ManyToMany {
            attentions.push(Attention::new(&mut p, rng, "st_att", d, config.att_dim)?);
        }
        let cells = (0..config.dec_layers)
            .map(|l| LstmCell::new(&mut p, rng, &format!("dec.l{l}"), if l == 0 { 2 * d } else { d }, d))
            .collect::<Result<Vec<_>, _>>()?;
        let out = Linear::new(&mut p, rng, "out_proj", d, config.trg_vocab, true)?;
        let dec = DecoderNet {
            embed: trg_embed,
            cells,
            out,
            vocab: config.trg_vocab,
        };
        let asr_dec = if arch == Architecture::ManyToMany {
            attentions.push(Attention::new(&mut p, rng, "asr_att", d, config.att_dim)?);
            // Outputs: source words then end-of-sequence; inputs add a start symbol.
            Some(DecoderNet::new(&mut p, rng, "asr_", &config, config.src_words + 2, config.src_words + 1)?)
        } else {
            None
        };
        Ok(Self {
            config,
            params: p,
            enc_pre,
            enc_s,
            enc_t,
            src_embed,
            ctc_proj,
            attentions,
            dec,
            asr_dec,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            text_encode: self.counters.text_encode.load(Ordering::Relaxed),
            decode_step: self.counters.decode_step.load(Ordering::Relaxed),
        }
    }

    /// The matrix read by the CTC classifier.
    pub fn ctc_matrix(&self) -> Option<&Tensor> {
        self.ctc_proj.map(|id| self.params.value(id))
    }

    /// The matrix read by the source embedding lookup.
    pub fn source_embedding(&self) -> Option<&Tensor> {
        self.src_embed.map(|id| self.params.value(id))
    }

    /// Stacks `DOWNSAMPLE` frames per step and applies `tanh(x W + b)`.
    pub fn enc_pre(&self, tape: &mut Tape, frames: &PaddedFrames, mode: &mut Mode) -> Result<EncoderOutput, ModelError> {
        let dim = self.config.feature_dim;
        if frames.dim != dim {
            return Err(ModelError::DimMismatch {
                what: "frame features",
                expected: dim,
                got: frames.dim,
            });
        }
        if frames.batch() == 0 || frames.lengths.contains(&0) {
            return Err(ModelError::EmptyInput("utterance without frames"));
        }
        let batch = frames.batch();
        let steps = frames.max_len.div_ceil(DOWNSAMPLE);
        let width = DOWNSAMPLE * dim;
        let mut data = vec![0.0; steps * batch * width];
        for t in 0..steps {
            for b in 0..batch {
                let row = &mut data[(t * batch + b) * width..(t * batch + b + 1) * width];
                for k in 0..DOWNSAMPLE {
                    let f = t * DOWNSAMPLE + k;
                    if f < frames.max_len {
                        row[k * dim..(k + 1) * dim].copy_from_slice(frames.frame(b, f));
                    }
                }
            }
        }
        let x = tape.constant(Tensor::new(vec![steps * batch, width], data)?);
        let y = self.enc_pre.forward(tape, &self.params, x)?;
        let y = tape.tanh(y)?;
        let y = mode.dropout(tape, y)?;
        Ok(EncoderOutput {
            states: y,
            lengths: frames.lengths.iter().map(|l| l.div_ceil(DOWNSAMPLE)).collect(),
            steps,
        })
    }

    /// Speech encoder: front-end followed by the bidirectional stack.
    pub fn speech_encode(&self, tape: &mut Tape, frames: &PaddedFrames, mode: &mut Mode) -> Result<EncoderOutput, ModelError> {
        let pre = self.enc_pre(tape, frames, mode)?;
        let states = self.run_stack(&self.enc_s, tape, &pre, mode)?;
        Ok(EncoderOutput { states, ..pre })
    }

    fn run_stack(&self, stack: &BiLstm, tape: &mut Tape, input: &EncoderOutput, mode: &mut Mode) -> Result<Var, ModelError> {
        let mut between = |tape: &mut Tape, v: Var| mode.dropout(tape, v);
        Ok(stack.forward(tape, &self.params, input.states, &input.lengths, input.steps, &mut between)?)
    }

    /// Looks up source tokens (blank included) in the source embedding.
    pub fn embed_source(&self, tape: &mut Tape, tokens: &PaddedTokens, mode: &mut Mode) -> Result<EncoderOutput, ModelError> {
        let table = self.src_embed.ok_or(ModelError::UnsupportedTask {
            architecture: self.config.architecture,
            task: Task::Mt,
        })?;
        if tokens.batch() == 0 || tokens.lengths.contains(&0) {
            return Err(ModelError::EmptyInput("source sentence without tokens"));
        }
        let batch = tokens.batch();
        let ids: Vec<usize> = (0..tokens.max_len).flat_map(|t| tokens.column(t)).collect();
        let table = tape.param(&self.params, table);
        let e = tape.embedding(table, &ids)?;
        let e = mode.dropout(tape, e)?;
        debug_assert_eq!(tape.value(e).rows(), tokens.max_len * batch);
        Ok(EncoderOutput {
            states: e,
            lengths: tokens.lengths.clone(),
            steps: tokens.max_len,
        })
    }

    /// Text encoder, shared by the MT path (embedded tokens) and the ST path (speech states).
    pub fn text_encode(&self, tape: &mut Tape, input: &EncoderOutput, mode: &mut Mode) -> Result<EncoderOutput, ModelError> {
        let enc_t = self.enc_t.as_ref().ok_or(ModelError::UnsupportedTask {
            architecture: self.config.architecture,
            task: Task::Mt,
        })?;
        let got = tape.value(input.states).cols();
        if got != self.config.d_model {
            return Err(ModelError::DimMismatch {
                what: "text encoder input",
                expected: self.config.d_model,
                got,
            });
        }
        self.counters.text_encode.fetch_add(1, Ordering::Relaxed);
        let states = self.run_stack(enc_t, tape, input, mode)?;
        Ok(EncoderOutput {
            states,
            lengths: input.lengths.clone(),
            steps: input.steps,
        })
    }

    /// Per-step log-probabilities over source words and blank, `[T*B, |V_src|+1]`.
    pub fn ctc_head(&self, tape: &mut Tape, hs: &EncoderOutput) -> Result<Var, ModelError> {
        let w = self.ctc_proj.ok_or(ModelError::UnsupportedTask {
            architecture: self.config.architecture,
            task: Task::Asr,
        })?;
        let w = tape.param(&self.params, w);
        let wt = tape.transpose(w)?;
        let logits = tape.matmul(hs.states, wt)?;
        Ok(tape.log_softmax(logits)?)
    }

    /// Encoder states the decoder attends to when translating speech.
    pub fn st_encode(&self, tape: &mut Tape, frames: &PaddedFrames, mode: &mut Mode) -> Result<DecoderMemory, ModelError> {
        let hs = self.speech_encode(tape, frames, mode)?;
        match self.config.architecture {
            Architecture::Tcen => {
                let ht = self.text_encode(tape, &hs, mode)?;
                self.memory(tape, &ht, MT_ATTENTION)
            }
            Architecture::ManyToMany => self.memory(tape, &hs, ST_ATTENTION),
            Architecture::Vanilla => self.memory(tape, &hs, MT_ATTENTION),
        }
    }

    /// Encoder states the decoder attends to when translating text.
    pub fn mt_encode(&self, tape: &mut Tape, tokens: &PaddedTokens, mode: &mut Mode) -> Result<DecoderMemory, ModelError> {
        let es = self.embed_source(tape, tokens, mode)?;
        let ht = self.text_encode(tape, &es, mode)?;
        self.memory(tape, &ht, MT_ATTENTION)
    }

    fn memory(&self, tape: &mut Tape, henc: &EncoderOutput, which: usize) -> Result<DecoderMemory, ModelError> {
        if henc.steps == 0 {
            return Err(ModelError::EmptyInput("encoder output"));
        }
        let attn = self.attentions[which].memory(tape, &self.params, henc.states, &henc.lengths, henc.steps)?;
        Ok(DecoderMemory { attn, which })
    }

    /// Repeats a single-example memory `n` times along the batch.
    pub fn repeat_memory(&self, tape: &mut Tape, mem: &DecoderMemory, n: usize) -> Result<DecoderMemory, ModelError> {
        let single = EncoderOutput {
            states: mem.attn.states,
            lengths: mem.attn.lengths.clone(),
            steps: mem.attn.steps,
        };
        let rep = single.repeat(tape, n)?;
        self.memory(tape, &rep, mem.which)
    }

    pub fn init_state(&self) -> DecoderState {
        DecoderState {
            layers: vec![None; self.dec.cells.len()],
        }
    }

    /// One decoder step: attend with the previous output, update the
    /// recurrent stack on `[embed(y_prev); context]`, and return the new state
    /// with `log p(y | ...)` of shape `[B, |V_trg|]`.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        mem: &DecoderMemory,
        state: &DecoderState,
        y_prev: &[usize],
        mode: &mut Mode,
    ) -> Result<(DecoderState, Var), ModelError> {
        self.counters.decode_step.fetch_add(1, Ordering::Relaxed);
        let batch = mem.attn.batch();
        if y_prev.len() != batch {
            return Err(ModelError::DimMismatch {
                what: "decoder batch",
                expected: batch,
                got: y_prev.len(),
            });
        }
        self.step_net(&self.dec, tape, mem, state, y_prev, mode)
    }

    fn step_net(
        &self,
        net: &DecoderNet,
        tape: &mut Tape,
        mem: &DecoderMemory,
        state: &DecoderState,
        y_prev: &[usize],
        mode: &mut Mode,
    ) -> Result<(DecoderState, Var), ModelError> {
        let (ctx, _) = self.attentions[mem.which].attend(tape, &self.params, &mem.attn, state.top())?;
        let table = tape.param(&self.params, net.embed);
        let emb = tape.embedding(table, y_prev)?;
        let emb = mode.dropout(tape, emb)?;
        let mut x = tape.concat(&[emb, ctx], 1)?;
        let mut layers = Vec::with_capacity(net.cells.len());
        for (l, cell) in net.cells.iter().enumerate() {
            let xw = cell.project_inputs(tape, &self.params, x)?;
            let next = cell.step(tape, &self.params, xw, state.layers[l])?;
            layers.push(Some(next));
            x = next.h;
            if l + 1 < net.cells.len() {
                x = mode.dropout(tape, x)?;
            }
        }
        let z = mode.dropout(tape, x)?;
        let logits = net.out.forward(tape, &self.params, z)?;
        let log_dist = tape.log_softmax(logits)?;
        Ok((DecoderState { layers }, log_dist))
    }

    /// Attention weights `[B, T]` the next decoder step would use.
    pub fn attention_weights(&self, tape: &mut Tape, mem: &DecoderMemory, state: &DecoderState) -> Result<Var, ModelError> {
        Ok(self.attentions[mem.which].attend(tape, &self.params, &mem.attn, state.top())?.1)
    }

    /// Token-averaged cross-entropy with gold previous tokens.
    pub fn teacher_force(
        &self,
        tape: &mut Tape,
        mem: &DecoderMemory,
        target: &TargetBatch,
        mode: &mut Mode,
    ) -> Result<TeacherForced, ModelError> {
        self.force_net(&self.dec, tape, mem, &target.inputs, &target.outputs, mode)
    }

    fn force_net(
        &self,
        net: &DecoderNet,
        tape: &mut Tape,
        mem: &DecoderMemory,
        inputs: &PaddedTokens,
        outputs: &PaddedTokens,
        mode: &mut Mode,
    ) -> Result<TeacherForced, ModelError> {
        let batch = inputs.batch();
        let vocab = net.vocab;
        let mut state = DecoderState {
            layers: vec![None; net.cells.len()],
        };
        let mut picks = Vec::with_capacity(inputs.max_len);
        let mut mask = Vec::with_capacity(inputs.max_len * batch);
        let mut correct = 0;
        for t in 0..inputs.max_len {
            let (next, log_dist) = if std::ptr::eq(net, &self.dec) {
                self.decode_step(tape, mem, &state, &inputs.column(t), mode)?
            } else {
                self.step_net(net, tape, mem, &state, &inputs.column(t), mode)?
            };
            state = next;
            let gold = outputs.column(t);
            let values = tape.value(log_dist);
            for (b, &g) in gold.iter().enumerate() {
                let m = outputs.mask(b, t);
                mask.push(m);
                if m > 0.0 && argmax(values.row(b)) == g {
                    correct += 1;
                }
            }
            let idx = gold.iter().enumerate().map(|(b, &g)| b * vocab + g).collect();
            picks.push(tape.gather(log_dist, idx, vec![batch, 1])?);
        }
        let tokens: usize = outputs.lengths.iter().sum();
        if tokens == 0 {
            return Err(ModelError::EmptyInput("target without tokens"));
        }
        let picked = tape.concat(&picks, 0)?;
        let mask = tape.constant(Tensor::new(vec![mask.len(), 1], mask)?);
        let masked = tape.mul(picked, mask)?;
        let total = tape.sum(masked)?;
        let loss = tape.scale(total, -1.0 / tokens as f64)?;
        Ok(TeacherForced { loss, tokens, correct })
    }

    /// Attentional transcript loss of the many-to-many baseline: `<s> x` in, `x </s>` out.
    fn asr_decoder_loss(&self, tape: &mut Tape, frames: &PaddedFrames, labels: &[Vec<usize>], mode: &mut Mode) -> Result<Var, ModelError> {
        let net = self.asr_dec.as_ref().ok_or(ModelError::UnsupportedTask {
            architecture: self.config.architecture,
            task: Task::Asr,
        })?;
        let words = self.config.src_words;
        let (eos, bos) = (words, words + 1);
        if labels.iter().any(Vec::is_empty) {
            return Err(ModelError::EmptyInput("transcript without tokens"));
        }
        if let Some(&bad) = labels.iter().flatten().find(|&&x| x >= words) {
            return Err(ModelError::Ctc(crate::ctc::CtcError::LabelOutOfRange {
                label: bad,
                position: 0,
                blank: words,
            }));
        }
        let inputs: Vec<Vec<usize>> = labels.iter().map(|l| std::iter::once(bos).chain(l.iter().copied()).collect()).collect();
        let outputs: Vec<Vec<usize>> = labels.iter().map(|l| l.iter().copied().chain(std::iter::once(eos)).collect()).collect();
        let hs = self.speech_encode(tape, frames, mode)?;
        let mem = self.memory(tape, &hs, ASR_ATTENTION)?;
        let tf = self.force_net(net, tape, &mem, &PaddedTokens::new(&inputs, 0), &PaddedTokens::new(&outputs, 0), mode)?;
        Ok(tf.loss)
    }

    /// Loss of one batch: mean CTC for ASR (an attentional transcript decoder in the
    /// many-to-many baseline), token-averaged cross-entropy for MT and ST.
    pub fn task_loss(&self, tape: &mut Tape, batch: &Batch, mode: &mut Mode) -> Result<TaskLoss, ModelError> {
        let task = batch.task;
        if !self.config.supports(task) {
            return Err(ModelError::UnsupportedTask {
                architecture: self.config.architecture,
                task,
            });
        }
        let need = |missing: &'static str| ModelError::Schema { task, missing };
        match task {
            Task::Asr => {
                let frames = batch.frames.as_ref().ok_or_else(|| need("frames"))?;
                let labels = batch.transcripts.as_ref().ok_or_else(|| need("transcripts"))?;
                if self.config.architecture == Architecture::ManyToMany {
                    let loss = self.asr_decoder_loss(tape, frames, labels, mode)?;
                    return Ok(TaskLoss {
                        loss: Some(loss),
                        value: tape.value(loss).item(),
                        skipped: Vec::new(),
                    });
                }
                let hs = self.speech_encode(tape, frames, mode)?;
                let lp = self.ctc_head(tape, &hs)?;
                let out = ctc_loss_batch(tape, lp, &hs.lengths, labels, self.config.blank())?;
                let value = match out.loss {
                    Some(l) => tape.value(l).item(),
                    None => f64::NAN,
                };
                Ok(TaskLoss {
                    loss: out.loss,
                    value,
                    skipped: out.skipped,
                })
            }
            Task::Mt | Task::St => {
                let target = batch.target.as_ref().ok_or_else(|| need("target"))?;
                let mem = if task == Task::Mt {
                    let source = batch.source.as_ref().ok_or_else(|| need("source"))?;
                    self.mt_encode(tape, source, mode)?
                } else {
                    let frames = batch.frames.as_ref().ok_or_else(|| need("frames"))?;
                    self.st_encode(tape, frames, mode)?
                };
                let tf = self.teacher_force(tape, &mem, target, mode)?;
                Ok(TaskLoss {
                    loss: Some(tf.loss),
                    value: tape.value(tf.loss).item(),
                    skipped: Vec::new(),
                })
            }
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
