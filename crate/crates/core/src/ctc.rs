//! Connectionist temporal classification.
//!
//! Labels live in `0..blank`; the blank token always takes the id `blank`
//! (the last row of a `(|V|+1)`-column distribution). The loss is a log-space
//! forward recursion built from tape primitives, so gradients come from the
//! tape rather than a hand-written backward pass.

use crate::numerics::{NumericsError, Tape, Tensor, Var, LOG_ZERO};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CtcError {
    #[error("label sequence is empty")]
    EmptyLabels,
    #[error("label {label} at position {position} is not below the blank id {blank}")]
    LabelOutOfRange { label: usize, position: usize, blank: usize },
    #[error("enumerating {alphabet}^{frames} paths exceeds the limit of {limit}")]
    EnumerationTooLarge { alphabet: usize, frames: usize, limit: u64 },
    #[error("log-probs shape {shape:?} does not fit {frames} frames x {batch} examples x {classes} classes")]
    BadLogProbs { shape: Vec<usize>, frames: usize, batch: usize, classes: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Frame-level path over labels plus blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CtcPath(pub Vec<usize>);

/// Upper bound on `(|V|+1)^T` accepted by [`enumerate_legal_paths`].
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

/// The many-to-one map from paths to label sequences: merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &id in path {
        if Some(id) != prev && id != blank {
            out.push(id);
        }
        prev = Some(id);
    }
    out
}

/// Interleaves blanks around the labels: `-, y1, -, y2, ..., yn, -`.
pub fn extended_labels(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Shortest path length that can collapse to `labels`: one frame per label
/// plus a separating blank between equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate_labels(labels: &[usize], blank: usize) -> Result<(), CtcError> {
    if labels.is_empty() {
        return Err(CtcError::EmptyLabels);
    }
    if let Some((position, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= blank) {
        return Err(CtcError::LabelOutOfRange { label, position, blank });
    }
    Ok(())
}

/// Brute-force enumeration of every length-`frames` path collapsing to `labels`.
/// Paths are returned in lexicographic order.
pub fn enumerate_legal_paths(labels: &[usize], frames: usize, blank: usize) -> Result<Vec<CtcPath>, CtcError> {
    if let Some((position, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= blank) {
        return Err(CtcError::LabelOutOfRange { label, position, blank });
    }
    let alphabet = blank + 1;
    let total = (alphabet as u64)
        .checked_pow(frames as u32)
        .filter(|&n| n <= ENUMERATION_LIMIT)
        .ok_or(CtcError::EnumerationTooLarge {
            alphabet,
            frames,
            limit: ENUMERATION_LIMIT,
        })?;
    let mut paths = Vec::new();
    let mut digits = vec![0usize; frames];
    for code in 0..total {
        let mut rest = code;
        for d in digits.iter_mut().rev() {
            *d = (rest % alphabet as u64) as usize;
            rest /= alphabet as u64;
        }
        if collapse(&digits, blank) == labels {
            paths.push(CtcPath(digits.clone()));
        }
    }
    Ok(paths)
}

/// Frame-wise argmax; ties go to the lowest id.
pub fn greedy_decode(log_probs: &Tensor) -> CtcPath {
    let cols = log_probs.cols();
    let path = (0..log_probs.rows())
        .map(|t| {
            let row = log_probs.row(t);
            let mut best = 0;
            for c in 1..cols {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    CtcPath(path)
}

/// Outcome of a single-sequence CTC loss.
#[derive(Clone, Debug)]
pub struct CtcLoss {
    /// `-log P(y|x)` on the tape; `None` when no legal path fits the frames.
    pub loss: Option<Var>,
    /// Loss value, `+inf` when infeasible.
    pub value: f64,
}

impl CtcLoss {
    pub fn is_infeasible(&self) -> bool {
        self.loss.is_none()
    }
}

/// Outcome of a batched CTC loss.
#[derive(Clone, Debug)]
pub struct CtcBatchLoss {
    /// Mean of `-log P(y|x)` over feasible examples; `None` when every example is infeasible.
    pub loss: Option<Var>,
    /// Per-example loss values (`+inf` for infeasible examples).
    pub per_example: Vec<f64>,
    /// Indices of examples skipped because their frame count is below [`min_frames`].
    pub skipped: Vec<usize>,
}

/// `-log P(labels | x)` for a `[T, blank+1]` matrix of per-frame log-probabilities.
pub fn ctc_loss(tape: &mut Tape, log_probs: Var, labels: &[usize], blank: usize) -> Result<CtcLoss, CtcError> {
    let frames = tape.value(log_probs).rows();
    let batch = ctc_loss_batch(tape, log_probs, &[frames], &[labels.to_vec()], blank)?;
    Ok(CtcLoss {
        loss: batch.loss,
        value: batch.per_example[0],
    })
}

/// Batched CTC over time-major log-probabilities: row `t * B + b` holds frame
/// `t` of example `b`. Frames at or beyond `lengths[b]` never enter example
/// `b`'s lattice, so they receive exactly zero gradient.
pub fn ctc_loss_batch(
    tape: &mut Tape,
    log_probs: Var,
    lengths: &[usize],
    labels: &[Vec<usize>],
    blank: usize,
) -> Result<CtcBatchLoss, CtcError> {
    let batch = lengths.len();
    let classes = blank + 1;
    let shape = tape.value(log_probs).shape().to_vec();
    let total_rows = tape.value(log_probs).rows();
    let bad = || CtcError::BadLogProbs {
        shape: shape.clone(),
        frames: if batch == 0 { 0 } else { total_rows / batch },
        batch,
        classes,
    };
    if batch == 0 || labels.len() != batch || tape.value(log_probs).cols() != classes || total_rows % batch != 0 {
        return Err(bad());
    }
    let steps = total_rows / batch;
    if lengths.iter().any(|&l| l > steps) {
        return Err(bad());
    }
    for y in labels {
        validate_labels(y, blank)?;
    }

    let feasible: Vec<usize> = (0..batch).filter(|&b| lengths[b] >= min_frames(&labels[b])).collect();
    let skipped: Vec<usize> = (0..batch).filter(|b| !feasible.contains(b)).collect();
    let mut per_example = vec![f64::INFINITY; batch];
    if feasible.is_empty() {
        return Ok(CtcBatchLoss {
            loss: None,
            per_example,
            skipped,
        });
    }

    // Lattice over the feasible examples only.
    let exts: Vec<Vec<usize>> = feasible.iter().map(|&b| extended_labels(&labels[b], blank)).collect();
    let rows = feasible.len();
    let width = exts.iter().map(Vec::len).max().unwrap_or(1);
    let max_len = feasible.iter().map(|&b| lengths[b]).max().unwrap_or(0);

    let mut skip_mask = vec![0.0; rows * width];
    let mut shift1_mask = vec![0.0; rows * width];
    let mut shift1_idx = vec![0usize; rows * width];
    let mut shift2_idx = vec![0usize; rows * width];
    let mut init_mask = vec![0.0; rows * width];
    for (r, ext) in exts.iter().enumerate() {
        for s in 0..width {
            let k = r * width + s;
            shift1_idx[k] = r * width + s.saturating_sub(1);
            shift2_idx[k] = r * width + s.saturating_sub(2);
            if s < ext.len() {
                if s >= 1 {
                    shift1_mask[k] = 1.0;
                }
                if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                    skip_mask[k] = 1.0;
                }
                if s < 2 {
                    init_mask[k] = 1.0;
                }
            }
        }
    }
    let fill = |mask: &[f64]| -> Vec<f64> { mask.iter().map(|&m| if m == 1.0 { 0.0 } else { LOG_ZERO }).collect() };
    let dims = vec![rows, width];
    let constant = |tape: &mut Tape, data: Vec<f64>| tape.constant(Tensor::from_parts(dims.clone(), data));
    let shift1_fill = fill(&shift1_mask);
    let skip_fill = fill(&skip_mask);
    let init_fill = fill(&init_mask);
    let shift1_mask_v = constant(tape, shift1_mask);
    let shift1_fill_v = constant(tape, shift1_fill);
    let skip_mask_v = constant(tape, skip_mask);
    let skip_fill_v = constant(tape, skip_fill);

    let emissions = |tape: &mut Tape, t: usize| -> Result<Var, NumericsError> {
        let mut idx = Vec::with_capacity(rows * width);
        for (r, &b) in feasible.iter().enumerate() {
            let base = (t * batch + b) * classes;
            for s in 0..width {
                idx.push(base + exts[r].get(s).copied().unwrap_or(blank));
            }
        }
        tape.gather(log_probs, idx, vec![rows, width])
    };

    let e0 = emissions(tape, 0)?;
    let init_mask_v = constant(tape, init_mask);
    let init_fill_v = constant(tape, init_fill);
    let masked = tape.mul(e0, init_mask_v)?;
    let mut alpha = tape.add(masked, init_fill_v)?;

    for t in 1..max_len {
        let e = emissions(tape, t)?;
        let s1 = tape.gather(alpha, shift1_idx.clone(), dims.clone())?;
        let s1 = tape.mul(s1, shift1_mask_v)?;
        let s1 = tape.add(s1, shift1_fill_v)?;
        let s2 = tape.gather(alpha, shift2_idx.clone(), dims.clone())?;
        let s2 = tape.mul(s2, skip_mask_v)?;
        let s2 = tape.add(s2, skip_fill_v)?;
        let acc = tape.logaddexp(alpha, s1)?;
        let acc = tape.logaddexp(acc, s2)?;
        let next = tape.add(acc, e)?;

        let active: Vec<f64> = feasible.iter().map(|&b| if t < lengths[b] { 1.0 } else { 0.0 }).collect();
        alpha = if active.iter().all(|&a| a == 1.0) {
            next
        } else {
            let keep: Vec<f64> = active.iter().map(|a| 1.0 - a).collect();
            let active_v = tape.constant(Tensor::from_parts(vec![rows, 1], active));
            let keep_v = tape.constant(Tensor::from_parts(vec![rows, 1], keep));
            let moved = tape.mul(next, active_v)?;
            let held = tape.mul(alpha, keep_v)?;
            tape.add(moved, held)?
        };
    }

    let last: Vec<usize> = exts.iter().enumerate().map(|(r, e)| r * width + e.len() - 1).collect();
    let before_last: Vec<usize> = exts.iter().enumerate().map(|(r, e)| r * width + e.len() - 2).collect();
    let end_blank = tape.gather(alpha, last, vec![rows, 1])?;
    let end_label = tape.gather(alpha, before_last, vec![rows, 1])?;
    let log_lik = tape.logaddexp(end_blank, end_label)?;
    for (r, &b) in feasible.iter().enumerate() {
        per_example[b] = -tape.value(log_lik).data()[r];
    }
    let total = tape.sum(log_lik)?;
    let loss = tape.scale(total, -1.0 / rows as f64)?;
    Ok(CtcBatchLoss {
        loss: Some(loss),
        per_example,
        skipped,
    })
}
