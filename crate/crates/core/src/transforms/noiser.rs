use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rle_decode, rle_encode, RleSequence, TransformError};
use crate::ctc::{greedy_decode, CtcPath};
use crate::data::{AsrRecord, Batch, MtRecord, PaddedTokens};
use crate::model::layers::{Attention, BiLstm, Linear, LstmCell, LstmState};
use crate::model::{argmax, Mode, TcenModel};
use crate::numerics::{HasParams, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::training::{clip_gradients, lrate, Adam, AdamConfig, ScheduleConfig};

/// One `(y, u, l)` triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub labels: Vec<usize>,
    pub path: RleSequence,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathDataset {
    pub records: Vec<PathRecord>,
}

impl PathDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Greedy CTC paths of an ASR model over a transcribed corpus.
pub fn build_path_dataset(
    asr: &TcenModel,
    corpus: &[AsrRecord],
    batch_size: usize,
) -> Result<PathDataset, TransformError> {
    if corpus.is_empty() {
        return Err(TransformError::EmptyCorpus("ASR"));
    }
    let mut records = Vec::with_capacity(corpus.len());
    for chunk in corpus.chunks(batch_size.max(1)) {
        let refs: Vec<&AsrRecord> = chunk.iter().collect();
        let batch = Batch::asr(&refs);
        let frames = batch.frames.as_ref().expect("asr batch carries frames");
        let mut tape = Tape::new();
        let hs = asr.speech_encode(&mut tape, frames, &mut Mode::eval())?;
        let lp = asr.ctc_head(&mut tape, &hs)?;
        let lp = tape.value(lp);
        let b = chunk.len();
        for (i, rec) in chunk.iter().enumerate() {
            let rows: Vec<f64> = (0..hs.lengths[i]).flat_map(|t| lp.row(t * b + i).to_vec()).collect();
            let utt = Tensor::new(vec![hs.lengths[i], lp.cols()], rows)?;
            records.push(PathRecord {
                labels: rec.transcript.clone(),
                path: rle_encode(&greedy_decode(&utt))?,
            });
        }
    }
    Ok(PathDataset { records })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiserDecode {
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiserConfig {
    pub d_model: usize,
    pub att_dim: usize,
    pub enc_layers: usize,
    /// Largest repetition count; longer runs are clamped.
    pub max_count: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: ScheduleConfig,
    pub clip_norm: f64,
    pub dropout: f64,
    pub decode: NoiserDecode,
    pub seed: u64,
}

impl NoiserConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            att_dim: 32,
            enc_layers: 1,
            max_count: 20,
            steps: 1000,
            batch_size: 16,
            schedule: ScheduleConfig {
                scale_k: 2.0,
                d_model: 32,
                warmup_n: 200,
            },
            clip_norm: 5.0,
            dropout: 0.0,
            decode: NoiserDecode::Greedy,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if self.d_model == 0 || self.d_model % 2 != 0 || self.att_dim == 0 || self.enc_layers == 0 {
            return Err(TransformError::Config("noiser dims must be positive, d_model even".into()));
        }
        if self.max_count == 0 || self.batch_size == 0 {
            return Err(TransformError::Config("max_count and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Serializable form of a trained noiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiserSnapshot {
    pub config: NoiserConfig,
    pub src_words: usize,
    pub frames_per_token: f64,
    pub params: Vec<SavedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Sequence-to-sequence model from a sentence to the runs `(u, l)` of a CTC path.
/// Both heads read the same decoder state.
#[derive(Clone, Debug)]
pub struct NoiserModel {
    config: NoiserConfig,
    src_words: usize,
    /// Mean expanded path length per source token in the training data.
    frames_per_token: f64,
    params: ParamStore,
    embed: ParamId,
    encoder: BiLstm,
    attention: Attention,
    tok_embed: ParamId,
    count_embed: ParamId,
    cell: LstmCell,
    tok_head: Linear,
    count_head: Linear,
}

impl HasParams for NoiserModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Decoder output of one noised sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedPath {
    pub runs: RleSequence,
    /// Decoding hit the length cap before emitting end-of-sequence.
    pub truncated: bool,
}

impl NoisedPath {
    pub fn path(&self) -> CtcPath {
        rle_decode(&self.runs)
    }
}

impl NoiserModel {
    pub fn new(config: NoiserConfig, src_words: usize) -> Result<Self, TransformError> {
        config.validate()?;
        if src_words == 0 {
            return Err(TransformError::Config("source vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let rng = &mut rng;
        let mut p = ParamStore::new();
        let d = config.d_model;
        let half = d / 2;
        let out = src_words + 2;
        let embed = p.add_uniform("noiser.embed", &[src_words, d], rng)?;
        let encoder = BiLstm::new(&mut p, rng, "noiser.enc", d, d, config.enc_layers)?;
        let attention = Attention::new(&mut p, rng, "noiser.att", d, config.att_dim)?;
        let tok_embed = p.add_uniform("noiser.tok_embed", &[out, d], rng)?;
        let count_embed = p.add_uniform("noiser.count_embed", &[config.max_count + 1, half], rng)?;
        let cell = LstmCell::new(&mut p, rng, "noiser.dec", 2 * d + half, d)?;
        let tok_head = Linear::new(&mut p, rng, "noiser.tok_head", d, out, true)?;
        let count_head = Linear::new(&mut p, rng, "noiser.count_head", d, config.max_count, true)?;
        Ok(Self {
            config,
            src_words,
            frames_per_token: 1.0,
            params: p,
            embed,
            encoder,
            attention,
            tok_embed,
            count_embed,
            cell,
            tok_head,
            count_head,
        })
    }

    pub fn config(&self) -> &NoiserConfig {
        &self.config
    }

    /// Blank id in the token head.
    pub fn blank(&self) -> usize {
        self.src_words
    }

    /// End-of-sequence id in the token head; also the start symbol.
    pub fn eos(&self) -> usize {
        self.src_words + 1
    }

    pub fn frames_per_token(&self) -> f64 {
        self.frames_per_token
    }

    pub fn snapshot(&self) -> NoiserSnapshot {
        NoiserSnapshot {
            config: self.config.clone(),
            src_words: self.src_words,
            frames_per_token: self.frames_per_token,
            params: self
                .params
                .iter()
                .map(|(_, p)| SavedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snap: &NoiserSnapshot) -> Result<Self, TransformError> {
        let mut model = Self::new(snap.config.clone(), snap.src_words)?;
        if snap.params.len() != model.params.len() {
            return Err(TransformError::Config(format!(
                "snapshot holds {} parameters, model has {}",
                snap.params.len(),
                model.params.len()
            )));
        }
        for t in &snap.params {
            let id = model
                .params
                .id(&t.name)
                .ok_or_else(|| TransformError::Config(format!("unknown parameter `{}`", t.name)))?;
            let value = Tensor::new(t.shape.clone(), t.data.clone())?;
            let slot = &mut model.params.get_mut(id).value;
            if slot.shape() != value.shape() {
                return Err(TransformError::Config(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    t.name,
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        model.frames_per_token = snap.frames_per_token;
        Ok(model)
    }

    fn encode(&self, tape: &mut Tape, labels: &[&[usize]], mode: &mut Mode) -> Result<crate::model::AttnMemory, TransformError> {
        let seqs: Vec<Vec<usize>> = labels.iter().map(|l| l.to_vec()).collect();
        if seqs.iter().any(Vec::is_empty) {
            return Err(TransformError::Invalid("empty source sentence".into()));
        }
        if let Some(&bad) = seqs.iter().flatten().find(|&&t| t >= self.src_words) {
            return Err(TransformError::Invalid(format!("source token {bad} outside the vocabulary")));
        }
        let tokens = PaddedTokens::new(&seqs, 0);
        let ids: Vec<usize> = (0..tokens.max_len).flat_map(|t| tokens.column(t)).collect();
        let table = tape.param(&self.params, self.embed);
        let e = tape.embedding(table, &ids)?;
        let e = mode.dropout(tape, e)?;
        let mut between = |tape: &mut Tape, v: Var| mode.dropout(tape, v);
        let states = self
            .encoder
            .forward(tape, &self.params, e, &tokens.lengths, tokens.max_len, &mut between)?;
        Ok(self.attention.memory(tape, &self.params, states, &tokens.lengths, tokens.max_len)?)
    }

    /// One decoder step; returns the new state with token and count log-probs.
    fn step(
        &self,
        tape: &mut Tape,
        mem: &crate::model::AttnMemory,
        state: Option<LstmState>,
        prev_tok: &[usize],
        prev_count: &[usize],
        mode: &mut Mode,
    ) -> Result<(LstmState, Var, Var), TransformError> {
        let (ctx, _) = self.attention.attend(tape, &self.params, mem, state.map(|s| s.h))?;
        let te = tape.param(&self.params, self.tok_embed);
        let te = tape.embedding(te, prev_tok)?;
        let ce = tape.param(&self.params, self.count_embed);
        let ce = tape.embedding(ce, prev_count)?;
        let x = tape.concat(&[te, ce, ctx], 1)?;
        let x = mode.dropout(tape, x)?;
        let xw = self.cell.project_inputs(tape, &self.params, x)?;
        let next = self.cell.step(tape, &self.params, xw, state)?;
        let z = mode.dropout(tape, next.h)?;
        let tok = self.tok_head.forward(tape, &self.params, z)?;
        let tok = tape.log_softmax(tok)?;
        let cnt = self.count_head.forward(tape, &self.params, z)?;
        let cnt = tape.log_softmax(cnt)?;
        Ok((next, tok, cnt))
    }

    /// Teacher-forced joint loss: mean token cross-entropy (end-of-sequence
    /// included) plus mean count cross-entropy over runs.
    pub fn loss(&self, tape: &mut Tape, records: &[&PathRecord], mode: &mut Mode) -> Result<Var, TransformError> {
        if records.is_empty() {
            return Err(TransformError::EmptyCorpus("path"));
        }
        for r in records {
            if r.path.counts().contains(&0) {
                return Err(TransformError::Invalid("repetition count below 1".into()));
            }
            if let Some(&bad) = r.path.tokens().iter().find(|&&t| t > self.blank()) {
                return Err(TransformError::Invalid(format!("path token {bad} outside the vocabulary")));
            }
        }
        let labels: Vec<&[usize]> = records.iter().map(|r| r.labels.as_slice()).collect();
        let mem = self.encode(tape, &labels, mode)?;
        let b = records.len();
        let max = self.config.max_count;
        let steps = records.iter().map(|r| r.path.len() + 1).max().unwrap_or(0);
        let (eos, out) = (self.eos(), self.src_words + 2);
        let mut prev_tok = vec![eos; b];
        let mut prev_count = vec![0; b];
        let mut state = None;
        let (mut tok_picks, mut tok_mask, mut cnt_picks, mut cnt_mask) = (vec![], vec![], vec![], vec![]);
        for k in 0..steps {
            let (next, tok, cnt) = self.step(tape, &mem, state, &prev_tok, &prev_count, mode)?;
            state = Some(next);
            let mut gold_tok = vec![0; b];
            let mut gold_cnt = vec![0; b];
            for (i, r) in records.iter().enumerate() {
                let n = r.path.len();
                let (tm, cm) = match k.cmp(&n) {
                    std::cmp::Ordering::Less => {
                        gold_tok[i] = r.path.tokens()[k];
                        gold_cnt[i] = r.path.counts()[k].min(max) - 1;
                        (1.0, 1.0)
                    }
                    std::cmp::Ordering::Equal => {
                        gold_tok[i] = eos;
                        (1.0, 0.0)
                    }
                    std::cmp::Ordering::Greater => (0.0, 0.0),
                };
                tok_mask.push(tm);
                cnt_mask.push(cm);
                prev_tok[i] = if k < n { gold_tok[i] } else { eos };
                prev_count[i] = if k < n { gold_cnt[i] + 1 } else { 0 };
            }
            let idx = gold_tok.iter().enumerate().map(|(i, &g)| i * out + g).collect();
            tok_picks.push(tape.gather(tok, idx, vec![b, 1])?);
            let idx = gold_cnt.iter().enumerate().map(|(i, &g)| i * max + g).collect();
            cnt_picks.push(tape.gather(cnt, idx, vec![b, 1])?);
        }
        let tok_loss = masked_mean(tape, &tok_picks, tok_mask)?;
        let cnt_loss = masked_mean(tape, &cnt_picks, cnt_mask)?;
        Ok(tape.add(tok_loss, cnt_loss)?)
    }

    /// Decodes the runs for a batch of sentences. The token head may not repeat
    /// the previous run token or stop before the first run; decoding stops at
    /// end-of-sequence or once the expanded length reaches the cap.
    pub fn decode<R: Rng>(&self, sentences: &[&[usize]], rng: &mut R) -> Result<Vec<NoisedPath>, TransformError> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let mem = self.encode(&mut tape, sentences, &mut Mode::eval())?;
        let b = sentences.len();
        let caps: Vec<usize> = sentences
            .iter()
            .map(|s| ((3.0 * self.frames_per_token * s.len() as f64).ceil() as usize).max(s.len()))
            .collect();
        let eos = self.eos();
        let mut runs: Vec<(Vec<usize>, Vec<usize>)> = vec![(vec![], vec![]); b];
        let mut frames = vec![0usize; b];
        let mut done = vec![false; b];
        let mut truncated = vec![false; b];
        let mut prev_tok = vec![eos; b];
        let mut prev_count = vec![0; b];
        let mut state = None;
        while done.iter().any(|d| !d) {
            let (next, tok, cnt) = self.step(&mut tape, &mem, state, &prev_tok, &prev_count, &mut Mode::eval())?;
            state = Some(next);
            let (tok, cnt) = (tape.value(tok).clone(), tape.value(cnt).clone());
            for i in 0..b {
                if done[i] {
                    continue;
                }
                let mut row = tok.row(i).to_vec();
                if runs[i].0.is_empty() {
                    row[eos] = f64::NEG_INFINITY;
                } else {
                    row[prev_tok[i]] = f64::NEG_INFINITY;
                }
                let t = self.choose(&row, rng);
                if t == eos {
                    done[i] = true;
                    continue;
                }
                let c = self.choose(cnt.row(i), rng) + 1;
                runs[i].0.push(t);
                runs[i].1.push(c);
                frames[i] += c;
                prev_tok[i] = t;
                prev_count[i] = c;
                if frames[i] >= caps[i] {
                    done[i] = true;
                    truncated[i] = true;
                }
            }
        }
        runs.into_iter()
            .zip(truncated)
            .map(|((u, l), truncated)| {
                Ok(NoisedPath {
                    runs: RleSequence::new(u, l)?,
                    truncated,
                })
            })
            .collect()
    }

    fn choose<R: Rng>(&self, log_probs: &[f64], rng: &mut R) -> usize {
        match self.config.decode {
            NoiserDecode::Greedy => argmax(log_probs),
            NoiserDecode::Sample => {
                let x: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = 0;
                for (i, lp) in log_probs.iter().enumerate() {
                    if lp.is_finite() {
                        acc += lp.exp();
                        last = i;
                        if x < acc {
                            return i;
                        }
                    }
                }
                last
            }
        }
    }
}

fn masked_mean(tape: &mut Tape, picks: &[Var], mask: Vec<f64>) -> Result<Var, NumericsError> {
    let n: f64 = mask.iter().sum();
    let picked = tape.concat(picks, 0)?;
    let mask = tape.constant(Tensor::new(vec![mask.len(), 1], mask)?);
    let masked = tape.mul(picked, mask)?;
    let total = tape.sum(masked)?;
    tape.scale(total, -1.0 / n.max(1.0))
}

/// Trains a fresh noiser on `(y, u, l)` triples with uniformly drawn batches.
/// Returns the model and the per-step losses.
pub fn train_noiser(data: &PathDataset, src_words: usize, config: &NoiserConfig) -> Result<(NoiserModel, Vec<f64>), TransformError> {
    if data.is_empty() {
        return Err(TransformError::EmptyCorpus("path"));
    }
    let mut model = NoiserModel::new(config.clone(), src_words)?;
    let label_tokens: usize = data.records.iter().map(|r| r.labels.len()).sum();
    let frames: usize = data.records.iter().map(|r| r.path.frames()).sum();
    model.frames_per_token = frames as f64 / label_tokens.max(1) as f64;
    let mut adam = Adam::new(AdamConfig::default(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6f_6973);
    let mut losses = Vec::with_capacity(config.steps);
    for n in 1..=config.steps {
        let batch: Vec<&PathRecord> = (0..config.batch_size.min(data.len()))
            .map(|_| &data.records[rng.random_range(0..data.len())])
            .collect();
        model.params.zero_grads();
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &batch, &mut Mode::train(config.dropout, &mut rng))?;
        losses.push(tape.value(loss).item());
        tape.backward(loss, &mut model.params)?;
        clip_gradients(&mut model.params, config.clip_norm)?;
        adam.update(&mut model.params, lrate(n, &config.schedule)?)?;
    }
    model.params.zero_grads();
    Ok((model, losses))
}

/// Decodes one sentence into a CTC-format path.
pub fn apply_noiser<R: Rng>(model: &NoiserModel, y: &[usize], rng: &mut R) -> Result<NoisedPath, TransformError> {
    Ok(model.decode(&[y], rng)?.remove(0))
}

/// Replaces every MT source with a noised path. Record `i` uses its own
/// generator seeded from `(seed, i)`, so the output does not depend on batching.
pub fn noise_corpus(model: &NoiserModel, corpus: &[MtRecord], seed: u64, batch_size: usize) -> Result<Vec<MtRecord>, TransformError> {
    let mut out = Vec::with_capacity(corpus.len());
    for (c, chunk) in corpus.chunks(batch_size.max(1)).enumerate() {
        let paths = if model.config.decode == NoiserDecode::Greedy {
            let sources: Vec<&[usize]> = chunk.iter().map(|r| r.source.as_slice()).collect();
            model.decode(&sources, &mut ChaCha8Rng::seed_from_u64(seed))?
        } else {
            chunk
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let idx = (c * batch_size.max(1) + i) as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(idx);
                    apply_noiser(model, &r.source, &mut rng)
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        for (r, p) in chunk.iter().zip(paths) {
            out.push(MtRecord {
                source: p.path().0,
                target: r.target.clone(),
            });
        }
    }
    Ok(out)
}
