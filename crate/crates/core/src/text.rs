//! Small text utilities shared by the ingest, corpus, and pipeline layers.

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// Collapses every run of Unicode whitespace to a single ASCII space and trims both ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// NFC normalization followed by whitespace collapse.
pub fn normalize(s: &str) -> String {
    collapse_whitespace(&s.nfc().collect::<String>())
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// True for control characters other than tab, newline and carriage return.
pub fn is_disallowed_control(c: char) -> bool {
    c.is_control() && !matches!(c, '\t' | '\n' | '\r')
}
