//! Value normalization shared by state tracking, validation and scoring.

/// Marker value that removes a slot from the dialogue state.
pub const DELETE_MARKER: &str = "none";

/// Value accepted for any slot regardless of its categorical value set.
pub const DONT_CARE: &str = "dontcare";

/// Lowercases, trims and collapses internal runs of whitespace to a single space.
pub fn normalize_value(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Stable hex digest used to key scripted completions and cache lookups.
pub fn content_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_value("  North "), "north");
        assert_eq!(normalize_value("The   Grand\tHotel"), "the grand hotel");
        assert_eq!(normalize_value(""), "");
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(content_hash("abc"), content_hash("abc"));
        assert_ne!(content_hash("abc"), content_hash("abd"));
        assert_eq!(content_hash("").len(), 64);
    }
}
