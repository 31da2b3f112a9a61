//! SHA-256 digests for provenance records.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::DataError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(sha256_hex(&bytes))
}

/// Digest of the compact JSON encoding of `value`. Field order follows the
/// type definitions and maps are expected to be ordered, so equal values
/// give equal digests.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}
