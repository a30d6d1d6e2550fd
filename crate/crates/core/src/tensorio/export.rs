//! Export manifests written by the model exporter next to the artifacts it
//! emits. The engine re-hashes every listed file before trusting it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, Result, TensorIoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub model: String,
    /// One of `vocab`, `embeddings`, `logits`, `contextual`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// File name (relative to the manifest) -> lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn verify_export_manifest(path: impl AsRef<Path>) -> Result<ExportManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: ExportManifest =
        serde_json::from_str(&text).map_err(|e| TensorIoError::MalformedLine {
            line: e.line(),
            message: e.to_string(),
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for (name, expected) in &manifest.files {
        let file = base.join(name);
        let found = sha256_file(&file)?;
        if !found.eq_ignore_ascii_case(expected) {
            return Err(TensorIoError::ChecksumMismatch {
                path: file,
                expected: expected.clone(),
                found,
            });
        }
    }
    Ok(manifest)
}

/// Hashes `files` (relative to the manifest's directory) and writes the manifest.
pub fn write_export_manifest(
    path: impl AsRef<Path>,
    model: &str,
    kind: &str,
    files: &[&str],
) -> Result<ExportManifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut hashes = BTreeMap::new();
    for name in files {
        hashes.insert(name.to_string(), sha256_file(base.join(name))?);
    }
    let manifest = ExportManifest {
        model: model.to_string(),
        kind: kind.to_string(),
        layer_index: None,
        template: None,
        dataset: None,
        files: hashes,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(io_err(path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.bin"), b"abc").unwrap();
        let m = write_export_manifest(dir.path().join("export.json"), "m", "vocab", &["a.bin"])
            .unwrap();
        assert_eq!(
            m.files["a.bin"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(verify_export_manifest(dir.path().join("export.json")).is_ok());

        std::fs::write(dir.path().join("a.bin"), b"abd").unwrap();
        assert!(matches!(
            verify_export_manifest(dir.path().join("export.json")),
            Err(TensorIoError::ChecksumMismatch { .. })
        ));
    }
}
