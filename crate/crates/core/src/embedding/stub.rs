use sha2::{Digest, Sha256};

use super::{EmbedError, EmbedderSpec, EmbeddingProvider};
use crate::text;

/// Deterministic offline embedder.
///
/// Each lowercased word is hashed (with the spec's seed) into a pseudo-random
/// direction; a text's vector is the sum over its words. Texts sharing words
/// therefore score high cosine, which is enough structure for fixtures. The
/// output is a pure function of `(text, dim, seed)`.
pub struct StubEmbedder {
    spec: EmbedderSpec,
}

impl StubEmbedder {
    pub fn new(spec: EmbedderSpec) -> Self {
        Self { spec }
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f32; self.spec.dim];
        let mut tokens = text::words(text);
        if tokens.is_empty() {
            tokens.push(text.trim().to_string());
        }
        for token in &tokens {
            add_token_direction(&mut acc, self.spec.seed, token);
        }
        acc
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn add_token_direction(acc: &mut [f32], seed: u64, token: &str) {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let mut state = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    for slot in acc.iter_mut() {
        // Top 24 bits mapped onto [-1, 1).
        let r = (splitmix64(&mut state) >> 40) as f32 / (1u64 << 23) as f32 - 1.0;
        *slot += r;
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}
