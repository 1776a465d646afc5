use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AsrRecord, Frames, MtRecord, StRecord, BOS_ID, EOS_ID, PAD_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Asr,
    Mt,
    St,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Asr, Task::Mt, Task::St];

    pub fn name(self) -> &'static str {
        match self {
            Task::Asr => "asr",
            Task::Mt => "mt",
            Task::St => "st",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asr" => Ok(Task::Asr),
            "mt" => Ok(Task::Mt),
            "st" => Ok(Task::St),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Zero-padded frames, batch-major: `data[(b * max_len + t) * dim + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedFrames {
    pub data: Vec<f64>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    pub dim: usize,
}

impl PaddedFrames {
    pub fn new(frames: &[&Frames]) -> Self {
        let dim = frames.first().map_or(0, |f| f.dim());
        let lengths: Vec<usize> = frames.iter().map(|f| f.len()).collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        let mut data = vec![0.0; frames.len() * max_len * dim];
        for (b, f) in frames.iter().enumerate() {
            let start = b * max_len * dim;
            data[start..start + f.data().len()].copy_from_slice(f.data());
        }
        Self {
            data,
            lengths,
            max_len,
            dim,
        }
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn frame(&self, b: usize, t: usize) -> &[f64] {
        let start = (b * self.max_len + t) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// 1.0 at valid frames, 0.0 at padding.
    pub fn mask(&self, b: usize, t: usize) -> f64 {
        if t < self.lengths[b] {
            1.0
        } else {
            0.0
        }
    }
}

/// Token ids padded with `pad`, batch-major: `ids[b * max_len + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedTokens {
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl PaddedTokens {
    pub fn new(seqs: &[Vec<usize>], pad: usize) -> Self {
        let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        let mut ids = vec![pad; seqs.len() * max_len];
        for (b, s) in seqs.iter().enumerate() {
            ids[b * max_len..b * max_len + s.len()].copy_from_slice(s);
        }
        Self { ids, lengths, max_len }
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn get(&self, b: usize, t: usize) -> usize {
        self.ids[b * self.max_len + t]
    }

    /// Ids at time `t` for every example.
    pub fn column(&self, t: usize) -> Vec<usize> {
        (0..self.batch()).map(|b| self.get(b, t)).collect()
    }

    pub fn mask(&self, b: usize, t: usize) -> f64 {
        if t < self.lengths[b] {
            1.0
        } else {
            0.0
        }
    }

    pub fn mask_column(&self, t: usize) -> Vec<f64> {
        (0..self.batch()).map(|b| self.mask(b, t)).collect()
    }
}

/// Teacher-forcing view of target sentences: `<bos> y` as inputs and `y <eos>` as outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    pub inputs: PaddedTokens,
    pub outputs: PaddedTokens,
}

impl TargetBatch {
    pub fn new(targets: &[&[usize]]) -> Self {
        let inputs: Vec<Vec<usize>> = targets
            .iter()
            .map(|t| std::iter::once(BOS_ID).chain(t.iter().copied()).collect())
            .collect();
        let outputs: Vec<Vec<usize>> = targets
            .iter()
            .map(|t| t.iter().copied().chain(std::iter::once(EOS_ID)).collect())
            .collect();
        Self {
            inputs: PaddedTokens::new(&inputs, PAD_ID),
            outputs: PaddedTokens::new(&outputs, PAD_ID),
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.outputs.lengths.iter().sum()
    }
}

/// A padded mini-batch for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub task: Task,
    pub frames: Option<PaddedFrames>,
    pub source: Option<PaddedTokens>,
    pub transcripts: Option<Vec<Vec<usize>>>,
    pub target: Option<TargetBatch>,
}

impl Batch {
    pub fn asr(records: &[&AsrRecord]) -> Self {
        let frames: Vec<&Frames> = records.iter().map(|r| &r.frames).collect();
        Self {
            task: Task::Asr,
            frames: Some(PaddedFrames::new(&frames)),
            source: None,
            transcripts: Some(records.iter().map(|r| r.transcript.clone()).collect()),
            target: None,
        }
    }

    pub fn mt(records: &[&MtRecord]) -> Self {
        let sources: Vec<Vec<usize>> = records.iter().map(|r| r.source.clone()).collect();
        let targets: Vec<&[usize]> = records.iter().map(|r| r.target.as_slice()).collect();
        Self {
            task: Task::Mt,
            frames: None,
            source: Some(PaddedTokens::new(&sources, 0)),
            transcripts: None,
            target: Some(TargetBatch::new(&targets)),
        }
    }

    pub fn st(records: &[&StRecord]) -> Self {
        let frames: Vec<&Frames> = records.iter().map(|r| &r.frames).collect();
        let targets: Vec<&[usize]> = records.iter().map(|r| r.target.as_slice()).collect();
        Self {
            task: Task::St,
            frames: Some(PaddedFrames::new(&frames)),
            source: None,
            transcripts: None,
            target: Some(TargetBatch::new(&targets)),
        }
    }

    pub fn len(&self) -> usize {
        if let Some(f) = &self.frames {
            f.batch()
        } else if let Some(s) = &self.source {
            s.batch()
        } else {
            0
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Length-bucketed shuffling. Records are sorted by length (ties in random
/// order), shuffled within buckets of `4 * batch_size`, cut into batches, and
/// the batch order is shuffled. Returns a partition of `0..lengths.len()`.
pub fn batchify<R: Rng>(lengths: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    for bucket in order.chunks_mut(4 * batch_size) {
        bucket.shuffle(rng);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}
