use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading or validating benchmark corpora.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: field `{field}`: {message}")]
    Parse {
        location: String,
        field: String,
        message: String,
    },
    #[error("{location}: {message}")]
    Validation { location: String, message: String },
}

impl CorpusError {
    pub(crate) fn parse(
        location: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Self::Parse {
            location: location.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            location: location.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("vector contains a non-finite entry")]
    NonFinite,
    #[error("embedding index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate case_id {0} in embedding index")]
    DuplicateId(u64),
    #[error("no embedding for case_id {0}")]
    MissingId(u64),
    #[error("{path}:{line}: {message}")]
    File {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding source cannot embed free text: {0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("k = {k} cannot host {kinds} demonstration kinds")]
    TooFewSlots { k: usize, kinds: usize },
    #[error("all demonstration kinds are disabled")]
    NoKinds,
    #[error("case {case_id}: {kind} demonstration needs a non-empty {field} list")]
    MissingPrompts {
        case_id: u64,
        kind: &'static str,
        field: &'static str,
    },
    #[error("query tail ({tail} units) exceeds context budget {budget}")]
    TailOverBudget { tail: usize, budget: usize },
    #[error("{records} demonstration records for {kinds} kind slots")]
    SlotMismatch { records: usize, kinds: usize },
}

#[derive(Debug, Error)]
pub enum LmError {
    #[error("score request has no continuations")]
    EmptyCandidates,
    #[error("score request has an empty continuation at index {0}")]
    EmptyCandidate(usize),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {message}; raw payload: {raw}")]
    Protocol { message: String, raw: String },
    #[error("mock rule {line}: {message}")]
    MockRule { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no {0} probe pairs to aggregate")]
    EmptyScope(&'static str),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{0}: length mismatch ({1} vs {2})")]
    LengthMismatch(&'static str, usize, usize),
    #[error("{0}: zero denominator")]
    ZeroDenominator(&'static str),
    #[error("{0}: negative or non-finite probability")]
    InvalidProbability(&'static str),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("case {case_id}: {source}")]
    Case {
        case_id: u64,
        #[source]
        source: Box<RunError>,
    },
    #[error("run aborted after {completed} completed case(s): {source}")]
    Aborted {
        completed: usize,
        #[source]
        source: Box<RunError>,
    },
    #[error("no cases to report")]
    NoCases,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
