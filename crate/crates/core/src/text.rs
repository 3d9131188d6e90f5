//! Tokenization shared by BM25 and ROUGE-L.

use unicode_segmentation::UnicodeSegmentation;

/// Lowercased Unicode words (UAX #29 word boundaries, punctuation dropped).
pub fn words(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}
