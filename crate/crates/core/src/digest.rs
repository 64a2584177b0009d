//! Content hashing shared by caches, transcripts and manifests.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Digest of a value's compact JSON serialization.
///
/// Struct fields serialize in declaration order, so this is stable for a given
/// type definition.
pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory JSON serialization cannot fail");
    sha256_hex(bytes)
}

/// Incremental hasher over length-prefixed chunks, so that chunk boundaries
/// are part of the digest.
#[derive(Default)]
pub struct ChunkHasher {
    inner: Sha256,
}

impl ChunkHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn chunk(&mut self, bytes: impl AsRef<[u8]>) -> &mut Self {
        let bytes = bytes.as_ref();
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.inner.finalize())
    }
}
