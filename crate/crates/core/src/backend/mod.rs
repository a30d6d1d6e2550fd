//! Sources of masked-position logits.
//!
//! [`FileBackend`] looks rows up in a pre-computed logits batch and is the
//! reference path. [`HttpBackend`] asks a scoring service for each prompt.

mod file;
mod http;

use serde::{Deserialize, Serialize};

use crate::aggregator::LogitVector;
use crate::prompting::{RenderedPrompt, MASK_MARKER};

pub use file::FileBackend;
pub use http::{HttpBackend, HttpBackendOptions, ScoreRequestBody, ScoreResponseBody};

#[derive(Debug, thiserror::Error)]
#[error("example {example_id:?}: {kind}")]
pub struct BackendError {
    pub example_id: String,
    pub kind: BackendErrorKind,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendErrorKind {
    #[error("no logits for this example")]
    MissingExample,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("scoring service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("expected {expected} logits, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("logit {index} is not finite")]
    NonFinite { index: usize },
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("prompt has no {MASK_MARKER} marker at offset {0}")]
    InvalidRequest(usize),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

impl BackendError {
    pub fn new(example_id: impl Into<String>, kind: BackendErrorKind) -> Self {
        Self {
            example_id: example_id.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub example_id: String,
    pub prompted_text: String,
    pub mask_char_offset: usize,
}

impl ScoreRequest {
    pub fn new(example_id: impl Into<String>, prompt: RenderedPrompt) -> Result<Self, BackendError> {
        let request = Self {
            example_id: example_id.into(),
            prompted_text: prompt.text,
            mask_char_offset: prompt.mask_char_offset,
        };
        let at_marker = request
            .prompted_text
            .char_indices()
            .nth(request.mask_char_offset)
            .is_some_and(|(byte, _)| request.prompted_text[byte..].starts_with(MASK_MARKER));
        if !at_marker {
            return Err(BackendError::new(
                request.example_id,
                BackendErrorKind::InvalidRequest(request.mask_char_offset),
            ));
        }
        Ok(request)
    }
}

/// Produces the logit vector at the prediction slot of a prompt.
///
/// Implementations must be deterministic and return exactly
/// [`vocab_size`](Self::vocab_size) finite values.
pub trait LogitBackend: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn score(&self, request: &ScoreRequest) -> Result<LogitVector, BackendError>;
}

pub(crate) fn validate_logits(
    example_id: &str,
    values: Vec<f32>,
    expected: usize,
) -> Result<LogitVector, BackendError> {
    use crate::aggregator::AggregateError;
    LogitVector::with_len(values, expected).map_err(|e| {
        let kind = match e {
            AggregateError::LengthMismatch { expected, found } => {
                BackendErrorKind::LengthMismatch { expected, found }
            }
            AggregateError::NonFinite { index } => BackendErrorKind::NonFinite { index },
            other => BackendErrorKind::InvalidResponse(other.to_string()),
        };
        BackendError::new(example_id, kind)
    })
}

/// Scores `requests` with at most `parallel` in flight, preserving order.
/// Fails with the error of the earliest failing request.
pub fn score_all(
    backend: &dyn LogitBackend,
    requests: &[ScoreRequest],
    parallel: usize,
) -> Result<Vec<LogitVector>, BackendError> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| BackendError::new("", BackendErrorKind::Pool(e.to_string())))?;
    let results: Vec<Result<LogitVector, BackendError>> =
        pool.install(|| requests.par_iter().map(|r| backend.score(r)).collect());
    results.into_iter().collect()
}
