use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of the canonical JSON serialization.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory serialization cannot fail");
    bytes_digest(&bytes)
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
