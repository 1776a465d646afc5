//! Run-length view of CTC paths, the noiser that imitates ASR paths, and
//! clean/noisy MT mixing.

mod mix;
mod noiser;
mod rle;

pub use mix::{mix_corpora, MixSampler, NoiseMixConfig};
pub use noiser::{
    apply_noiser, build_path_dataset, noise_corpus, train_noiser, NoisedPath, NoiserConfig, NoiserDecode, NoiserModel,
    NoiserSnapshot, PathDataset, PathRecord, SavedTensor,
};
pub use rle::{rle_decode, rle_encode, RleSequence};

use crate::ctc::CtcError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("path is empty")]
    EmptyPath,
    #[error("invalid run-length sequence: {0}")]
    Invalid(String),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("mixing rate must lie in [0, 1], got {0}")]
    MixRate(f64),
    #[error("noiser config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Train(#[from] Box<TrainError>),
}

impl From<CtcError> for TransformError {
    fn from(e: CtcError) -> Self {
        Self::Model(ModelError::Ctc(e))
    }
}

impl From<TrainError> for TransformError {
    fn from(e: TrainError) -> Self {
        Self::Train(Box::new(e))
    }
}
