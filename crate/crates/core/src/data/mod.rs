//! Vocabularies, corpus files, padded batches and the synthetic task generator.

mod batch;
mod corpus;
mod synthetic;
mod vocab;

use std::path::{Path, PathBuf};

pub use batch::{batchify, Batch, PaddedFrames, PaddedTokens, TargetBatch, Task};
pub use corpus::{read_corpus, write_corpus, AsrRecord, CorpusRecord, Frames, MtRecord, StRecord};
pub use synthetic::{gen_synthetic, SyntheticCorpus, SyntheticSpec};
pub use vocab::{
    VocabKind, Vocabs, Vocabulary, BLANK_TOKEN, BOS_ID, BOS_TOKEN, EOS_ID, EOS_TOKEN, PAD_ID, PAD_TOKEN,
};

/// Longest accepted utterance, in frames.
pub const MAX_FRAMES: usize = 3000;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {source}", path.display())]
    Line {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<DataError>,
    },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("synthetic spec: {0}")]
    Spec(String),
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn at_line(path: &Path, line: usize, source: DataError) -> Self {
        Self::Line {
            path: path.to_path_buf(),
            line,
            source: Box::new(source),
        }
    }
}
