use std::path::Path;

use super::{validate_logits, BackendError, BackendErrorKind, LogitBackend, ScoreRequest};
use crate::aggregator::LogitVector;
use crate::tensorio::{read_logits_batch, LogitsBatch, TensorIoError};

/// Serves rows of a pre-computed logits batch by example id.
#[derive(Debug, Clone)]
pub struct FileBackend {
    batch: LogitsBatch,
}

impl FileBackend {
    pub fn new(batch: LogitsBatch) -> Self {
        Self { batch }
    }

    pub fn open(
        tensor_path: impl AsRef<Path>,
        manifest_path: impl AsRef<Path>,
        vocab_size: usize,
    ) -> Result<Self, TensorIoError> {
        Ok(Self::new(read_logits_batch(
            tensor_path,
            manifest_path,
            vocab_size,
        )?))
    }
}

impl LogitBackend for FileBackend {
    fn vocab_size(&self) -> usize {
        self.batch.width()
    }

    fn score(&self, request: &ScoreRequest) -> Result<LogitVector, BackendError> {
        let row = self.batch.lookup(&request.example_id).map_err(|_| {
            BackendError::new(request.example_id.as_str(), BackendErrorKind::MissingExample)
        })?;
        validate_logits(&request.example_id, row.to_vec(), self.vocab_size())
    }
}
