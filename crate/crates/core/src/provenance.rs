use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "ccl";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stamp attached to every artifact the toolkit writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_digest: impl Into<String>, seed: u64) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_digest: config_digest.into(),
            seed,
        }
    }

    /// Provenance for artifacts produced outside a configured run (tests,
    /// library callers).
    pub fn unconfigured(seed: u64) -> Self {
        Self::new("none", seed)
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config is serializable");
    sha256_hex(&bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
