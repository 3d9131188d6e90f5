//! Retrieval and verification engine for previously fact-checked claims.
//!
//! The crate is organised around the four stages a fact-checker's query goes
//! through:
//!
//! 1. **retrieve** the most similar fact-checks ([`retrieval`], backed by
//!    [`embedding`] providers or the BM25 lexical baseline),
//! 2. **filter** the candidate set down to the relevant items with an LLM
//!    ([`llm::filter_candidates`]),
//! 3. **summarize** the relevant fact-check articles ([`llm::summarize`]),
//! 4. **predict** the veracity of the query from that context
//!    ([`llm::predict_veracity`]).
//!
//! [`pipeline`] wires the stages together for interactive use, [`harness`]
//! runs the offline evaluations, and [`metrics`] holds every evaluation
//! measure.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod text;

mod http;
mod sync;
#[cfg(test)]
mod test_server;

pub use corpus::{Corpus, FactCheck, Post, VeracityLabel};
pub use embedding::{EmbedderSpec, EmbeddingVector};
pub use retrieval::{RankedItem, RankedList, VectorIndex};
