// JSON-lines corpus files. Tokens are stored as strings, frames as nested
// arrays with 17 significant digits so that every f64 round-trips exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{DataError, Vocabs, MAX_FRAMES};

/// Acoustic feature matrix of `len()` frames by `dim` features, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    dim: usize,
    data: Vec<f64>,
}

impl Frames {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(DataError::Invalid(format!("{} values do not form frames of dim {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(DataError::Invalid("frames have inconsistent dimensions".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.is_empty() {
            return Err(DataError::Invalid("frames are empty".into()));
        }
        if self.len() > MAX_FRAMES {
            return Err(DataError::Invalid(format!(
                "{} frames exceed the limit of {MAX_FRAMES}",
                self.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite feature value {v}")));
        }
        Ok(())
    }
}

/// Speech with its source-language transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct AsrRecord {
    pub frames: Frames,
    pub transcript: Vec<usize>,
}

/// Source sentence (possibly in CTC-path form, with blanks) and its translation.
#[derive(Clone, Debug, PartialEq)]
pub struct MtRecord {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Speech with its target-language translation.
#[derive(Clone, Debug, PartialEq)]
pub struct StRecord {
    pub frames: Frames,
    pub target: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AsrLine {
    frames: Vec<Vec<f64>>,
    transcript: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MtLine {
    source: Vec<String>,
    target: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StLine {
    frames: Vec<Vec<f64>>,
    target: Vec<String>,
}

fn non_empty(field: &str, tokens: &[usize]) -> Result<(), DataError> {
    if tokens.is_empty() {
        return Err(DataError::Invalid(format!("`{field}` is empty")));
    }
    Ok(())
}

fn check_target(vocabs: &Vocabs, ids: &[usize]) -> Result<(), DataError> {
    non_empty("target", ids)?;
    if let Some(&id) = ids.iter().find(|&&i| i < 3 || i >= vocabs.trg.len()) {
        return Err(DataError::Invalid(format!("target id {id} is a special or out of range")));
    }
    Ok(())
}

fn write_tokens(out: &mut String, ids: &[usize], vocab: &super::Vocabulary) -> Result<(), DataError> {
    out.push('[');
    for (i, &id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let tok = vocab
            .token(id)
            .ok_or_else(|| DataError::Invalid(format!("id {id} outside vocabulary of {}", vocab.len())))?;
        out.push_str(&serde_json::to_string(tok).expect("string serialization"));
    }
    out.push(']');
    Ok(())
}

fn write_frames(out: &mut String, frames: &Frames) -> Result<(), DataError> {
    frames.validate()?;
    out.push('[');
    for t in 0..frames.len() {
        if t > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, v) in frames.frame(t).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("write to string");
        }
        out.push(']');
    }
    out.push(']');
    Ok(())
}

/// A record type with a JSON-lines representation.
pub trait CorpusRecord: Sized {
    fn to_line(&self, vocabs: &Vocabs) -> Result<String, DataError>;
    fn from_line(line: &str, vocabs: &Vocabs) -> Result<Self, DataError>;
}

impl CorpusRecord for AsrRecord {
    fn to_line(&self, vocabs: &Vocabs) -> Result<String, DataError> {
        let mut s = String::from("{\"frames\":");
        write_frames(&mut s, &self.frames)?;
        s.push_str(",\"transcript\":");
        write_tokens(&mut s, &self.transcript, &vocabs.src)?;
        s.push('}');
        Ok(s)
    }

    fn from_line(line: &str, vocabs: &Vocabs) -> Result<Self, DataError> {
        let raw: AsrLine = serde_json::from_str(line).map_err(|e| DataError::Invalid(e.to_string()))?;
        let frames = Frames::from_rows(&raw.frames)?;
        frames.validate()?;
        let transcript = vocabs.src.encode(&raw.transcript)?;
        non_empty("transcript", &transcript)?;
        if transcript.contains(&vocabs.src.blank()) {
            return Err(DataError::Invalid("transcript contains the blank token".into()));
        }
        Ok(Self { frames, transcript })
    }
}

impl CorpusRecord for MtRecord {
    fn to_line(&self, vocabs: &Vocabs) -> Result<String, DataError> {
        let mut s = String::from("{\"source\":");
        write_tokens(&mut s, &self.source, &vocabs.src)?;
        s.push_str(",\"target\":");
        write_tokens(&mut s, &self.target, &vocabs.trg)?;
        s.push('}');
        Ok(s)
    }

    fn from_line(line: &str, vocabs: &Vocabs) -> Result<Self, DataError> {
        let raw: MtLine = serde_json::from_str(line).map_err(|e| DataError::Invalid(e.to_string()))?;
        let source = vocabs.src.encode(&raw.source)?;
        non_empty("source", &source)?;
        let target = vocabs.trg.encode(&raw.target)?;
        check_target(vocabs, &target)?;
        Ok(Self { source, target })
    }
}

impl CorpusRecord for StRecord {
    fn to_line(&self, vocabs: &Vocabs) -> Result<String, DataError> {
        let mut s = String::from("{\"frames\":");
        write_frames(&mut s, &self.frames)?;
        s.push_str(",\"target\":");
        write_tokens(&mut s, &self.target, &vocabs.trg)?;
        s.push('}');
        Ok(s)
    }

    fn from_line(line: &str, vocabs: &Vocabs) -> Result<Self, DataError> {
        let raw: StLine = serde_json::from_str(line).map_err(|e| DataError::Invalid(e.to_string()))?;
        let frames = Frames::from_rows(&raw.frames)?;
        frames.validate()?;
        let target = vocabs.trg.encode(&raw.target)?;
        check_target(vocabs, &target)?;
        Ok(Self { frames, target })
    }
}

pub fn write_corpus<R: CorpusRecord>(records: &[R], vocabs: &Vocabs, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, r) in records.iter().enumerate() {
        let line = r.to_line(vocabs).map_err(|e| DataError::at_line(path, i + 1, e))?;
        writeln!(out, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

/// Reads a corpus; blank lines are ignored and an empty file yields an empty corpus.
pub fn read_corpus<R: CorpusRecord>(path: &Path, vocabs: &Vocabs) -> Result<Vec<R>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(R::from_line(&line, vocabs).map_err(|e| DataError::at_line(path, i + 1, e))?);
    }
    Ok(records)
}
