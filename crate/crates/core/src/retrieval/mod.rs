//! Ranking engines: exact cosine top-K, BM25, and two-step criteria retrieval.

mod bm25;
mod criteria;
mod index;
mod languages;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbedError;

pub use bm25::{bm25_rank, Bm25Index, Bm25Params};
pub use criteria::{
    criteria_retrieve, reference_filtered_rank, render_criteria_template, CriteriaOutcome, CriteriaQuery,
    DEFAULT_PREFILTER_THRESHOLD,
};
pub use index::{build_index, VectorIndex, INDEX_FORMAT_VERSION};
pub use languages::language_name;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("query has dim {found}, index has dim {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("vector for {0} is not normalized")]
    NotNormalized(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("indexes cover different id sets")]
    IndexMismatch,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported index version: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub factcheck_id: String,
    pub score: f64,
}

/// Score descending, then id ascending: a total order.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Ordered `(factcheck_id, score)` pairs for one query. Scores are
/// non-increasing, ids unique, ties broken by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    items: Vec<RankedItem>,
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            items: Vec::new(),
        }
    }

    /// Sorts scored ids into rank order, keeping the first `k` when given.
    pub fn from_scores(
        query_id: impl Into<String>,
        scored: impl IntoIterator<Item = (String, f64)>,
        k: Option<usize>,
    ) -> Self {
        let mut items: Vec<RankedItem> = scored
            .into_iter()
            .map(|(factcheck_id, score)| RankedItem { factcheck_id, score })
            .collect();
        items.sort_by(|a, b| rank_order(a.score, &a.factcheck_id, b.score, &b.factcheck_id));
        items.dedup_by(|a, b| a.factcheck_id == b.factcheck_id);
        if let Some(k) = k {
            items.truncate(k);
        }
        Self {
            query_id: query_id.into(),
            items,
        }
    }

    /// A list whose order is given; scores descend from `len` to 1.
    pub fn from_ordered_ids(query_id: impl Into<String>, ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        Self {
            query_id: query_id.into(),
            items: ids
                .into_iter()
                .enumerate()
                .map(|(i, factcheck_id)| RankedItem {
                    factcheck_id,
                    score: (n - i) as f64,
                })
                .collect(),
        }
    }

    pub(crate) fn from_sorted_items(query_id: impl Into<String>, items: Vec<RankedItem>) -> Self {
        Self {
            query_id: query_id.into(),
            items,
        }
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.factcheck_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.factcheck_id == id).map(|p| p + 1)
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self {
            query_id: self.query_id.clone(),
            items: self.items.iter().take(k).cloned().collect(),
        }
    }

    /// Keeps items whose id passes `keep`, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        Self {
            query_id: self.query_id.clone(),
            items: self.items.iter().filter(|i| keep(&i.factcheck_id)).cloned().collect(),
        }
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.items.iter().all(|i| seen.insert(i.factcheck_id.as_str()))
            && self
                .items
                .windows(2)
                .all(|w| rank_order(w[0].score, &w[0].factcheck_id, w[1].score, &w[1].factcheck_id) == Ordering::Less)
    }
}
