use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("lexicon size {size} is smaller than the {distinct} distinct characters in the corpus")]
    LexiconTooSmall { size: usize, distinct: usize },
    #[error("word {word:?} has {len} characters, longer than the sequence limit {limit}")]
    WordTooLong { word: String, len: usize, limit: usize },
    #[error("sequence of length {len} exceeds the limit {limit}")]
    SequenceTooLong { len: usize, limit: usize },
    #[error("invalid span {start}..{end}: {reason}")]
    InvalidSpan {
        start: usize,
        end: usize,
        reason: &'static str,
    },
    #[error("context length {context} is invalid for a document of length {len}: {reason}")]
    InvalidContext {
        context: usize,
        len: usize,
        reason: &'static str,
    },
    #[error("document of length {len} is too long for exhaustive enumeration (max {max})")]
    TooLongForEnumeration { len: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("character vocabulary does not match the corpus: {0}")]
    VocabMismatch(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
