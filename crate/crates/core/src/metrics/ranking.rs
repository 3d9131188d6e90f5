use std::collections::HashSet;

use super::{MetricError, RelevanceJudgments};
use crate::retrieval::RankedList;

pub const DEFAULT_EVAL_DEPTH: usize = 10;

fn relevant_for<'a>(
    judg: &'a RelevanceJudgments,
    ranking: &RankedList,
) -> Result<&'a std::collections::BTreeSet<String>, MetricError> {
    judg.get(&ranking.query_id)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| MetricError::MissingJudgments(ranking.query_id.clone()))
}

/// Fraction of queries with at least one relevant id in the top `k`.
pub fn success_at_k(rankings: &[RankedList], judg: &RelevanceJudgments, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    if rankings.is_empty() {
        return Err(MetricError::EmptyQuerySet);
    }
    let mut hits = 0usize;
    for r in rankings {
        let rel = relevant_for(judg, r)?;
        if r.ids().take(k).any(|id| rel.contains(id)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Mean reciprocal rank of the first relevant id; a query without any
/// relevant id in its ranking contributes 0.
pub fn mrr(rankings: &[RankedList], judg: &RelevanceJudgments) -> Result<f64, MetricError> {
    if rankings.is_empty() {
        return Err(MetricError::EmptyQuerySet);
    }
    let mut total = 0.0;
    for r in rankings {
        let rel = relevant_for(judg, r)?;
        if let Some(pos) = r.ids().position(|id| rel.contains(id)) {
            total += 1.0 / (pos + 1) as f64;
        }
    }
    Ok(total / rankings.len() as f64)
}

/// `|ids(predicted) ∩ ids(reference)| / |ids(reference)|` with both lists
/// cut to `depth`.
pub fn common_fc_proportion(predicted: &RankedList, reference: &RankedList, depth: usize) -> Result<f64, MetricError> {
    if depth == 0 {
        return Err(MetricError::InvalidK);
    }
    let reference: HashSet<&str> = reference.ids().take(depth).collect();
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let common = predicted.ids().take(depth).filter(|id| reference.contains(id)).count();
    Ok(common as f64 / reference.len() as f64)
}
