use std::collections::HashMap;

use super::VeracityLabel;

const FALSE_SYNONYMS: &[&str] = &["false", "fake", "hoax", "incorrect", "misleading", "altered"];
const TRUE_SYNONYMS: &[&str] = &["true", "correct", "accurate"];
const UNVERIFIABLE_SYNONYMS: &[&str] = &["unverifiable", "no evidence", "unproven", "mixture", "missing context"];

/// Result of normalizing one raw rating string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub label: VeracityLabel,
    /// Set when `raw` was not found in the synonym table.
    pub unknown: Option<String>,
}

/// Case-insensitive synonym table mapping published ratings onto the three
/// veracity classes. Unknown strings map to `Unverifiable` and are reported.
#[derive(Debug, Clone)]
pub struct RatingNormalizer {
    table: HashMap<String, VeracityLabel>,
}

impl Default for RatingNormalizer {
    fn default() -> Self {
        let mut table = HashMap::new();
        for (words, label) in [
            (FALSE_SYNONYMS, VeracityLabel::False),
            (TRUE_SYNONYMS, VeracityLabel::True),
            (UNVERIFIABLE_SYNONYMS, VeracityLabel::Unverifiable),
        ] {
            for w in words {
                table.insert((*w).to_string(), label);
            }
        }
        Self { table }
    }
}

fn canonical_key(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl RatingNormalizer {
    /// Empty table: every string except the three canonical class names is unknown.
    pub fn empty() -> Self {
        let mut n = Self { table: HashMap::new() };
        for label in VeracityLabel::ALL {
            n.insert(label.as_str(), label);
        }
        n
    }

    pub fn insert(&mut self, raw: &str, label: VeracityLabel) {
        self.table.insert(canonical_key(raw), label);
    }

    pub fn normalize(&self, raw: &str) -> Normalized {
        match self.table.get(&canonical_key(raw)) {
            Some(label) => Normalized {
                label: *label,
                unknown: None,
            },
            None => Normalized {
                label: VeracityLabel::Unverifiable,
                unknown: Some(raw.to_string()),
            },
        }
    }
}

/// Normalizes with the default synonym table.
pub fn normalize_rating(raw: &str) -> Normalized {
    RatingNormalizer::default().normalize(raw)
}
