//! Opaque identifiers.
//!
//! Ids are derived from content hashes rather than drawn at random so that
//! identical inputs always produce identical project documents.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            /// Derives an id from an ordered list of seed strings.
            pub fn derive(parts: &[&str]) -> Self {
                Self(format!("{}-{}", $prefix, short_hash(parts)))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(ShotId, "shot");
id_type!(SceneId, "scene");
id_type!(VersionId, "ver");
id_type!(AssetId, "asset");
id_type!(JobId, "job");
id_type!(SuggestionId, "sugg");

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 12 hex chars of the SHA-256 over the NUL-joined parts.
pub fn short_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())[..12].to_string()
}

/// 64-bit seed from the same hash, for seeding deterministic generators.
pub fn seed_from(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(buf)
}

/// Returns `candidate` or, if `taken` reports it in use, the first free
/// `candidate-N` suffix.
pub fn unique_id<T, F>(candidate: T, taken: F) -> T
where
    T: From<String> + AsRef<str>,
    F: Fn(&str) -> bool,
{
    if !taken(candidate.as_ref()) {
        return candidate;
    }
    let base = candidate.as_ref().to_string();
    (2..)
        .map(|n| format!("{base}-{n}"))
        .find(|s| !taken(s))
        .map(T::from)
        .expect("unbounded suffix search")
}
