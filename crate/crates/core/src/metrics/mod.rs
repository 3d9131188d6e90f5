//! Evaluation measures for retrieval, filtration, classification, rank
//! agreement and summary overlap.

mod classification;
mod correlation;
mod ranking;
mod rouge;

use std::collections::{BTreeMap, BTreeSet};

pub use classification::{macro_prf, tnr_fnr, youden_threshold, ConfusionCounts, MacroScores, YoudenPoint};
pub use correlation::{kendall_tau, kendall_tau_b, spearman, spearman_from_values};
pub use ranking::{common_fc_proportion, mrr, success_at_k, DEFAULT_EVAL_DEPTH};
pub use rouge::{rouge_l, RougeScore};

/// Relevant fact-check ids per query id.
pub type RelevanceJudgments = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no queries to evaluate")]
    EmptyQuerySet,
    #[error("query {0} has no relevance judgments")]
    MissingJudgments(String),
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("both classes must be present")]
    SingleClass,
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("reference list is empty")]
    EmptyReference,
}
