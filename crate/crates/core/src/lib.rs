//! In-context knowledge editing: demonstration retrieval, context assembly,
//! candidate scoring and edit-quality metrics.
//!
//! The usual entry points are the suites in [`runner`]; every stage is also
//! usable on its own.

pub mod corpus;
pub mod demo;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod retrieval;
pub mod runner;

pub use corpus::{EditRecord, TemporalFactRecord};
pub use demo::{assemble_context, ContextPlan, Demonstration, Kind};
pub use error::{CorpusError, DemoError, LmError, MetricsError, RetrievalError, RunError};
pub use lm::{Backend, MockBackend, MockRule, ScoreRequest, ScoreResult};
pub use metrics::{CaseResult, MetricsReport, ProbePair, Scope};
pub use retrieval::{EmbeddingIndex, EmbeddingVector, Neighbor};
pub use runner::{RunConfig, Summary};
