use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::DataError;

pub const BLANK_TOKEN: &str = "-";
pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabKind {
    /// Words followed by the blank token, which takes id `|V|`.
    Source,
    /// `<pad>`, `<bos>`, `<eos>` followed by words.
    Target,
}

/// Token/id map. Ids are dense from 0 and equal line numbers in the vocabulary file.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn build(kind: VocabKind, tokens: Vec<String>) -> Result<Self, DataError> {
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(DataError::Vocabulary(format!("token {i} ({t:?}) is empty or contains whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(DataError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { kind, tokens, index })
    }

    pub fn source<S: AsRef<str>>(words: &[S]) -> Result<Self, DataError> {
        let mut tokens: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        if tokens.iter().any(|t| t == BLANK_TOKEN) {
            return Err(DataError::Vocabulary("source words may not contain the blank token".into()));
        }
        tokens.push(BLANK_TOKEN.to_string());
        Self::build(VocabKind::Source, tokens)
    }

    pub fn target<S: AsRef<str>>(words: &[S]) -> Result<Self, DataError> {
        let mut tokens = vec![PAD_TOKEN.to_string(), BOS_TOKEN.to_string(), EOS_TOKEN.to_string()];
        for w in words {
            if w.as_ref() == BLANK_TOKEN {
                return Err(DataError::Vocabulary("blank token is reserved for the source vocabulary".into()));
            }
            tokens.push(w.as_ref().to_string());
        }
        Self::build(VocabKind::Target, tokens)
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    /// Total number of ids, including blank or specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of ordinary words.
    pub fn num_words(&self) -> usize {
        match self.kind {
            VocabKind::Source => self.tokens.len() - 1,
            VocabKind::Target => self.tokens.len() - 3,
        }
    }

    /// Blank id (`|V_src|`). Only meaningful for source vocabularies.
    pub fn blank(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>, DataError> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).ok_or_else(|| DataError::UnknownToken(t.as_ref().to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>").to_string())
            .collect()
    }

    /// Writes one token per line.
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| DataError::io(path, e))
    }

    pub fn read(path: &Path, kind: VocabKind) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let ok = match kind {
            VocabKind::Source => tokens.last().map(String::as_str) == Some(BLANK_TOKEN),
            VocabKind::Target => tokens.len() >= 3 && tokens[..3] == [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN],
        };
        if !ok {
            return Err(DataError::Vocabulary(format!(
                "{}: layout does not match a {kind:?} vocabulary",
                path.display()
            )));
        }
        Self::build(kind, tokens)
    }
}

/// Source and target vocabularies of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabs {
    pub src: Vocabulary,
    pub trg: Vocabulary,
}
