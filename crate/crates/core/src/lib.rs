//! Tandem connectionist encoding network (TCEN) for end-to-end speech translation.
//!
//! A speech encoder pre-trained with CTC feeds a text encoder pre-trained on
//! machine translation, followed by an attention decoder. The CTC
//! classification matrix and the source embedding table share one storage,
//! and MT sources can be lengthened into CTC-path form by a learned noiser.

pub mod numerics;
pub mod ctc;
pub mod data;
pub mod model;
pub mod transforms;
pub mod training;
pub mod eval;
pub mod pipeline;
