//! Decoding, BLEU, teacher-forced accuracy and learning-curve tables.

mod accuracy;
mod beam;
mod bleu;
mod curves;

use std::path::PathBuf;

pub use accuracy::token_accuracy;
pub use beam::{beam_search, greedy_search, BeamConfig, BeamInput, Hypothesis, LengthPenalty};
pub use bleu::{bleu, BleuReport, MAX_ORDER};
pub use curves::{curves_csv, emit_curves, Curve};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{hypotheses} hypotheses but {references} references")]
    CountMismatch { hypotheses: usize, references: usize },
    #[error("nothing to score")]
    Empty,
    #[error("curve `{label}` is not aligned with `{first}`: {detail}")]
    Misaligned { label: String, first: String, detail: String },
    #[error("beam config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
