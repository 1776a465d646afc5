use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::{Frames, PaddedFrames, PaddedTokens, BOS_ID, EOS_ID, PAD_ID};
use crate::model::{DecoderMemory, Mode, TcenModel};
use crate::numerics::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthPenalty {
    /// `log p + w * len`
    Additive,
    /// `log p / len^w`
    Divisive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam: usize,
    pub length_weight: f64,
    pub max_len: usize,
    pub penalty: LengthPenalty,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 10,
            length_weight: 0.2,
            max_len: 50,
            penalty: LengthPenalty::Additive,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.beam == 0 || self.max_len == 0 {
            return Err(EvalError::Config("beam and max_len must be at least 1".into()));
        }
        if !self.length_weight.is_finite() {
            return Err(EvalError::Config("length_weight must be finite".into()));
        }
        Ok(())
    }

    /// Final score of a hypothesis with `len` tokens (end-of-sentence excluded).
    pub fn score(&self, log_prob: f64, len: usize) -> f64 {
        match self.penalty {
            LengthPenalty::Additive => log_prob + self.length_weight * len as f64,
            LengthPenalty::Divisive => log_prob / (len.max(1) as f64).powf(self.length_weight),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BeamInput<'a> {
    Speech(&'a Frames),
    Text(&'a [usize]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Output tokens without `<bos>` and `<eos>`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub score: f64,
    /// `max_len` was reached before `<eos>`.
    pub truncated: bool,
}

struct Live {
    tokens: Vec<usize>,
    log_prob: f64,
    row: usize,
    width: usize,
}

fn encode(model: &TcenModel, tape: &mut Tape, input: BeamInput) -> Result<DecoderMemory, EvalError> {
    let mut mode = Mode::eval();
    Ok(match input {
        BeamInput::Speech(f) => model.st_encode(tape, &PaddedFrames::new(&[f]), &mut mode)?,
        BeamInput::Text(s) => model.mt_encode(tape, &PaddedTokens::new(&[s.to_vec()], 0), &mut mode)?,
    })
}

fn allowed(token: usize) -> bool {
    token != PAD_ID && token != BOS_ID
}

/// Beam search over the decoder. Searches of every width `1..=beam` run side by
/// side and the best finished hypothesis over all of them is returned, so the
/// result never gets worse as the beam grows and width 1 is greedy decoding.
/// Within a width, extensions are ranked by log-probability (ties: lexicographic);
/// final hypotheses by length-adjusted score, then earlier finish, then lexicographic.
pub fn beam_search(model: &TcenModel, input: BeamInput, cfg: &BeamConfig) -> Result<Hypothesis, EvalError> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let mem = encode(model, &mut tape, input)?;
    let mut state = model.init_state();
    let mut live: Vec<Live> = (1..=cfg.beam)
        .map(|width| Live {
            tokens: Vec::new(),
            log_prob: 0.0,
            row: 0,
            width,
        })
        .collect();
    let mut finished: Vec<(Hypothesis, usize)> = Vec::new();
    for step in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        let rows: Vec<usize> = live.iter().map(|h| h.row).collect();
        let selected = state.select(&mut tape, &rows)?;
        let batch_mem = model.repeat_memory(&mut tape, &mem, live.len())?;
        let prev: Vec<usize> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS_ID)).collect();
        let (next, log_dist) = model.decode_step(&mut tape, &batch_mem, &selected, &prev, &mut Mode::eval())?;
        let dist = tape.value(log_dist).clone();
        let mut survivors = Vec::new();
        for width in 1..=cfg.beam {
            let mut cands: Vec<(f64, Vec<usize>, usize)> = Vec::new();
            for (i, h) in live.iter().enumerate().filter(|(_, h)| h.width == width) {
                let row = dist.row(i);
                let mut order: Vec<usize> = (0..row.len()).filter(|&t| allowed(t)).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                for &t in order.iter().take(width) {
                    let mut tokens = h.tokens.clone();
                    tokens.push(t);
                    cands.push((h.log_prob + row[t], tokens, i));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            for (log_prob, mut tokens, row) in cands.into_iter().take(width) {
                if tokens.last() == Some(&EOS_ID) {
                    tokens.pop();
                    let score = cfg.score(log_prob, tokens.len());
                    finished.push((
                        Hypothesis {
                            tokens,
                            log_prob,
                            score,
                            truncated: false,
                        },
                        step,
                    ));
                } else if step + 1 == cfg.max_len {
                    let score = cfg.score(log_prob, tokens.len());
                    finished.push((
                        Hypothesis {
                            tokens,
                            log_prob,
                            score,
                            truncated: true,
                        },
                        step,
                    ));
                } else {
                    survivors.push(Live {
                        tokens,
                        log_prob,
                        row,
                        width,
                    });
                }
            }
        }
        state = next;
        live = survivors;
    }
    finished
        .into_iter()
        .min_by(|(a, sa), (b, sb)| {
            b.score
                .total_cmp(&a.score)
                .then(sa.cmp(sb))
                .then_with(|| a.tokens.cmp(&b.tokens))
        })
        .map(|(h, _)| h)
        .ok_or(EvalError::Empty)
}

/// Argmax decoding, one token per step; ties go to the lowest id.
pub fn greedy_search(model: &TcenModel, input: BeamInput, max_len: usize) -> Result<Hypothesis, EvalError> {
    let mut tape = Tape::new();
    let mem = encode(model, &mut tape, input)?;
    let mut state = model.init_state();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut prev = BOS_ID;
    for _ in 0..max_len {
        let (next, log_dist) = model.decode_step(&mut tape, &mem, &state, &[prev], &mut Mode::eval())?;
        state = next;
        let row = tape.value(log_dist).row(0);
        let mut best = None;
        for (t, &v) in row.iter().enumerate().filter(|&(t, _)| allowed(t)) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        let (t, v) = best.expect("vocabulary has a word");
        log_prob += v;
        if t == EOS_ID {
            return Ok(Hypothesis {
                score: log_prob,
                tokens,
                log_prob,
                truncated: false,
            });
        }
        tokens.push(t);
        prev = t;
    }
    Ok(Hypothesis {
        score: log_prob,
        tokens,
        log_prob,
        truncated: true,
    })
}
