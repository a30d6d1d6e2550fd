//! Portable on-disk formats shared between the engine and the model exporter.
//!
//! * `.npt` tensors: `"NPPT"` magic, little-endian `u32` version, little-endian
//!   `u32` header length, a UTF-8 JSON header `{"dtype","shape"}`, then the raw
//!   row-major little-endian `f32` payload.
//! * `.vocab.jsonl`: one `{"id","token","special"}` object per line.
//! * `.manifest.jsonl`: one `{"row","example_id"}` object per line, mapping a
//!   logits-batch row to the example it was computed for.
//! * `.jsonl` datasets: one record per line, see [`DatasetRecord`].
//!
//! Everything loaded here is immutable once constructed.

mod dataset;
mod export;
mod logits;
mod tensor;
mod vocab;

use std::path::{Path, PathBuf};

pub use dataset::{parse_dataset, read_dataset, write_dataset, DatasetRecord, Payload};
pub use export::{sha256_file, verify_export_manifest, write_export_manifest, ExportManifest};
pub use logits::{read_logits_batch, write_logits_batch, LogitsBatch, ManifestLine};
pub use tensor::{
    decode_tensor, encode_tensor, read_embeddings, read_tensor, write_tensor, EmbeddingMatrix,
    Tensor, TENSOR_MAGIC, TENSOR_VERSION,
};
pub use vocab::{parse_vocab, read_vocab, write_vocab, VocabEntry, Vocabulary};

pub type Result<T, E = TensorIoError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"NPPT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor format version {found} (expected {TENSOR_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated tensor file while reading {what}")]
    Truncated { what: &'static str },
    #[error("payload length {found} bytes disagrees with declared shape {shape:?} ({expected} bytes)")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("malformed tensor header: {0}")]
    Header(String),
    #[error("unsupported dtype {0:?}, only \"f32\" is supported")]
    UnsupportedDtype(String),
    #[error("tensor rank {0} is not supported (expected 1 or 2)")]
    BadRank(usize),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("duplicate id {id} on line {line}")]
    DuplicateId { id: u32, line: usize },
    #[error("vocabulary ids are not contiguous: id {missing} is missing")]
    IdGap { missing: u32 },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("vocabulary has no non-special tokens")]
    NoRegularTokens,
    #[error("logits manifest lists {manifest} rows but the tensor has {tensor}")]
    RowCountMismatch { manifest: usize, tensor: usize },
    #[error("duplicate example id {0:?}")]
    DuplicateExampleId(String),
    #[error("manifest row {row} on line {line} is duplicated or out of range")]
    BadManifestRow { row: usize, line: usize },
    #[error("row width {found} disagrees with vocabulary size {expected}")]
    VocabSizeMismatch { expected: usize, found: usize },
    #[error("no logits for example {0:?}")]
    MissingExample(String),
    #[error("record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("checksum mismatch for {path}: manifest says {expected}, file hashes to {found}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TensorIoError + '_ {
    move |source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}
