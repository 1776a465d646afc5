use serde::{Deserialize, Serialize};

use super::TransformError;
use crate::ctc::CtcPath;

/// Run-length view of a CTC path: the unique run tokens `u` and their repetition counts `l`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleSequence {
    u: Vec<usize>,
    l: Vec<usize>,
}

impl RleSequence {
    pub fn new(u: Vec<usize>, l: Vec<usize>) -> Result<Self, TransformError> {
        if u.len() != l.len() {
            return Err(TransformError::Invalid(format!(
                "{} run tokens but {} counts",
                u.len(),
                l.len()
            )));
        }
        if u.is_empty() {
            return Err(TransformError::EmptyPath);
        }
        if let Some(i) = l.iter().position(|&c| c == 0) {
            return Err(TransformError::Invalid(format!("count at run {i} is zero")));
        }
        if let Some(i) = u.windows(2).position(|w| w[0] == w[1]) {
            return Err(TransformError::Invalid(format!(
                "runs {i} and {} repeat token {}",
                i + 1,
                u[i]
            )));
        }
        Ok(Self { u, l })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.u
    }

    pub fn counts(&self) -> &[usize] {
        &self.l
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Length of the expanded path.
    pub fn frames(&self) -> usize {
        self.l.iter().sum()
    }
}

/// Splits a path into maximal runs.
pub fn rle_encode(path: &CtcPath) -> Result<RleSequence, TransformError> {
    let mut u: Vec<usize> = Vec::new();
    let mut l: Vec<usize> = Vec::new();
    for &tok in &path.0 {
        match u.last() {
            Some(&last) if last == tok => *l.last_mut().expect("runs align") += 1,
            _ => {
                u.push(tok);
                l.push(1);
            }
        }
    }
    if u.is_empty() {
        return Err(TransformError::EmptyPath);
    }
    Ok(RleSequence { u, l })
}

/// Expands every run back into frames.
pub fn rle_decode(r: &RleSequence) -> CtcPath {
    let mut path = Vec::with_capacity(r.frames());
    for (&tok, &n) in r.u.iter().zip(&r.l) {
        path.extend(std::iter::repeat_n(tok, n));
    }
    CtcPath(path)
}
