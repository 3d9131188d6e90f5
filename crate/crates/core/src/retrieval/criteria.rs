use std::collections::HashSet;

use serde::Serialize;

use super::{language_name, RankedList, RetrievalError, VectorIndex};
use crate::corpus::{Corpus, FactCheck};
use crate::embedding::Embedder;

pub const DEFAULT_PREFILTER_THRESHOLD: f64 = 0.8;

/// Four labeled lines describing a fact-check and its metadata; the text
/// embedded for criteria matching.
pub fn render_criteria_template(fc: &FactCheck) -> String {
    let date = fc
        .published_date
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| "unknown".into());
    let org = if fc.organization.trim().is_empty() {
        "unknown"
    } else {
        fc.organization.trim()
    };
    format!(
        "Claim: {}\nLanguage: {}\nDate: {}\nOrganization: {}",
        fc.claim_text,
        language_name(&fc.language),
        date,
        org
    )
}

/// A natural-language criterion plus the post used to rank what passes it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaQuery {
    pub criteria_text: String,
    pub post_text: String,
    pub prefilter_threshold: f64,
    pub k: usize,
}

impl CriteriaQuery {
    pub fn new(criteria_text: impl Into<String>, post_text: impl Into<String>, k: usize) -> Self {
        Self {
            criteria_text: criteria_text.into(),
            post_text: post_text.into(),
            prefilter_threshold: DEFAULT_PREFILTER_THRESHOLD,
            k,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.prefilter_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.prefilter_threshold) {
            return Err(RetrievalError::InvalidQuery(format!(
                "prefilter threshold {} outside [0, 1]",
                self.prefilter_threshold
            )));
        }
        if self.k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.criteria_text.trim().is_empty() || self.post_text.trim().is_empty() {
            return Err(RetrievalError::InvalidQuery(
                "criteria and post text must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaOutcome {
    pub ranked: RankedList,
    /// Ids passing the pre-filter, ascending.
    pub survivors: Vec<String>,
    /// Highest criteria similarity observed over the whole index.
    pub max_similarity: Option<f64>,
    /// Set when nothing passed the pre-filter.
    pub diagnostic: Option<String>,
}

/// Two-step retrieval: keep entries whose template similarity to the
/// criterion is strictly above the threshold, then rank the survivors by
/// claim similarity to the post.
pub fn criteria_retrieve(
    index_meta: &VectorIndex,
    index_claim: &VectorIndex,
    q: &CriteriaQuery,
    embedder: &Embedder,
    query_id: &str,
) -> Result<CriteriaOutcome, RetrievalError> {
    q.validate()?;
    if index_meta.len() != index_claim.len() || !index_meta.ids().iter().all(|id| index_claim.contains(id)) {
        return Err(RetrievalError::IndexMismatch);
    }
    let vectors = embedder.embed(&[q.criteria_text.clone(), q.post_text.clone()])?;
    let (criteria_vec, post_vec) = (&vectors[0], &vectors[1]);

    let scores = index_meta.scores(criteria_vec)?;
    let max_similarity = scores.iter().map(|(_, s)| *s).reduce(f64::max);
    let mut survivors: Vec<String> = scores
        .into_iter()
        .filter(|(_, s)| *s > q.prefilter_threshold)
        .map(|(id, _)| id)
        .collect();
    survivors.sort();

    if survivors.is_empty() {
        let diagnostic = format!(
            "no fact-check exceeded criteria similarity {} (max observed {})",
            q.prefilter_threshold,
            max_similarity.map_or("n/a".to_string(), |m| format!("{m:.4}"))
        );
        return Ok(CriteriaOutcome {
            ranked: RankedList::empty(query_id),
            survivors,
            max_similarity,
            diagnostic: Some(diagnostic),
        });
    }
    let keep: HashSet<&str> = survivors.iter().map(String::as_str).collect();
    let ranked = index_claim.top_k_where(post_vec, q.k, query_id, |id| keep.contains(id))?;
    Ok(CriteriaOutcome {
        ranked,
        survivors,
        max_similarity,
        diagnostic: None,
    })
}

/// Exact top-`k` cosine ranking restricted to fact-checks passing a
/// symbolic predicate; the reference for criteria retrieval.
pub fn reference_filtered_rank(
    corpus: &Corpus,
    manual_filter: impl Fn(&FactCheck) -> bool,
    post_text: &str,
    embedder: &Embedder,
    index_claim: &VectorIndex,
    k: usize,
    query_id: &str,
) -> Result<RankedList, RetrievalError> {
    let keep: HashSet<&str> = corpus
        .fact_checks()
        .filter(|fc| manual_filter(fc))
        .map(|fc| fc.id.as_str())
        .collect();
    if keep.is_empty() {
        return Ok(RankedList::empty(query_id));
    }
    let post_vec = embedder.embed_one(post_text)?;
    index_claim.top_k_where(&post_vec, k, query_id, |id| keep.contains(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Integrity;
    use crate::embedding::{EmbedderSpec, LookupEmbedder};
    use crate::retrieval::build_index;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use std::collections::HashMap;
    use std::sync::Arc;

    #[test]
    fn template_golden() {
        let mut fc = FactCheck::new("1", "X", "es");
        fc.published_date = NaiveDate::from_ymd_opt(2021, 3, 4);
        fc.organization = "AFP".into();
        assert_eq!(
            render_criteria_template(&fc),
            "Claim: X\nLanguage: Spanish\nDate: 2021-03-04\nOrganization: AFP"
        );
    }

    #[test]
    fn template_unknowns_and_locality() {
        let fc = FactCheck::new("1", "X", "xx");
        assert_eq!(
            render_criteria_template(&fc),
            "Claim: X\nLanguage: xx\nDate: unknown\nOrganization: unknown"
        );
        let mut other = fc.clone();
        other.claim_text = "Y".into();
        let (a, b) = (render_criteria_template(&fc), render_criteria_template(&other));
        let diff: Vec<_> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff, vec![("Claim: X", "Claim: Y")]);
    }

    fn lookup(entries: &[(&str, [f32; 2])]) -> Embedder {
        let table: HashMap<String, Vec<f32>> = entries.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect();
        Embedder::new(Arc::new(LookupEmbedder::new("lk", 2, table)))
    }

    #[test]
    fn degenerate_thresholds() {
        let e = lookup(&[
            ("crit", [1.0, 0.0]),
            ("post", [0.0, 1.0]),
            ("ma", [1.0, 0.1]),
            ("mb", [1.0, 2.0]),
            ("ca", [0.2, 1.0]),
            ("cb", [1.0, 0.3]),
        ]);
        let meta = build_index(&e, &[("a".into(), "ma".into()), ("b".into(), "mb".into())]).unwrap();
        let claim = build_index(&e, &[("a".into(), "ca".into()), ("b".into(), "cb".into())]).unwrap();

        let q = CriteriaQuery::new("crit", "post", 5).with_threshold(0.0);
        let out = criteria_retrieve(&meta, &claim, &q, &e, "q").unwrap();
        let direct = claim.top_k(&e.embed_one("post").unwrap(), 5, "q").unwrap();
        assert_eq!(out.ranked, direct);

        let q = q.with_threshold(1.0);
        let out = criteria_retrieve(&meta, &claim, &q, &e, "q").unwrap();
        assert!(out.ranked.is_empty());
        assert!(out.diagnostic.unwrap().contains("max observed"));
        assert!(out.max_similarity.unwrap() > 0.99);

        let q = q.with_threshold(0.8);
        let out = criteria_retrieve(&meta, &claim, &q, &e, "q").unwrap();
        assert_eq!(out.survivors, vec!["a"]);
        assert!(matches!(
            criteria_retrieve(&meta, &claim, &q.clone().with_threshold(1.5), &e, "q"),
            Err(RetrievalError::InvalidQuery(_))
        ));
    }

    #[test]
    fn reference_filter_by_language_and_date() {
        let mk = |id: &str, lang: &str, date: (i32, u32, u32)| {
            let mut f = FactCheck::new(id, format!("claim about topic {id}"), lang);
            f.published_date = NaiveDate::from_ymd_opt(date.0, date.1, date.2);
            f
        };
        let fcs = vec![
            mk("1", "es", (2020, 2, 1)),
            mk("2", "en", (2020, 5, 1)),
            mk("3", "es", (2019, 12, 31)),
            mk("4", "en", (2020, 12, 31)),
            mk("5", "es", (2021, 1, 1)),
            mk("6", "es", (2020, 1, 1)),
        ];
        let (corpus, _) = Corpus::assemble(fcs, vec![], Integrity::Strict).unwrap();
        let e = Embedder::from_spec(&EmbedderSpec::stub("s", 64)).unwrap();
        let items: Vec<(String, String)> = corpus
            .fact_checks()
            .map(|f| (f.id.clone(), f.claim_text.clone()))
            .collect();
        let idx = build_index(&e, &items).unwrap();

        let es = reference_filtered_rank(&corpus, |f| f.language == "es", "topic", &e, &idx, 10, "q").unwrap();
        assert!(es.ids().all(|id| corpus.fact_check(id).unwrap().language == "es"));
        assert_eq!(es.len(), 4);

        let all = reference_filtered_rank(&corpus, |_| true, "topic", &e, &idx, 10, "q").unwrap();
        assert_eq!(all, idx.top_k(&e.embed_one("topic").unwrap(), 10, "q").unwrap());

        let (lo, hi) = (
            NaiveDate::from_ymd_opt(2020, 1, 1),
            NaiveDate::from_ymd_opt(2020, 12, 31),
        );
        let in_2020 = |f: &FactCheck| f.published_date >= lo && f.published_date <= hi;
        let r = reference_filtered_rank(&corpus, in_2020, "topic", &e, &idx, 10, "q").unwrap();
        let q = e.embed_one("topic").unwrap();
        let mut oracle: Vec<(String, f64)> = ["1", "2", "4", "6"]
            .iter()
            .map(|id| (id.to_string(), idx.score(&q, id).unwrap().unwrap()))
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(
            r.ids().collect::<Vec<_>>(),
            oracle.iter().map(|(i, _)| i.as_str()).collect::<Vec<_>>()
        );

        let none = reference_filtered_rank(&corpus, |_| false, "topic", &e, &idx, 10, "q").unwrap();
        assert!(none.is_empty());
    }

    proptest! {
        #[test]
        fn survivors_shrink_as_threshold_rises(
            words in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,3}", 2..15),
            lo in 0.0f64..1.0,
            hi in 0.0f64..1.0,
        ) {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let e = Embedder::from_spec(&EmbedderSpec::stub("s", 16)).unwrap();
            let meta_items: Vec<(String, String)> = words.iter().enumerate().map(|(i, w)| (format!("f{i}"), w.clone())).collect();
            let claim_items: Vec<(String, String)> =
                words.iter().enumerate().map(|(i, w)| (format!("f{i}"), format!("{w} claim"))).collect();
            let meta = build_index(&e, &meta_items).unwrap();
            let claim = build_index(&e, &claim_items).unwrap();
            let run = |t: f64| {
                criteria_retrieve(&meta, &claim, &CriteriaQuery::new("a b", "c d", 50).with_threshold(t), &e, "q").unwrap()
            };
            let (low, high) = (run(lo), run(hi));
            prop_assert!(high.survivors.iter().all(|id| low.survivors.contains(id)));
            for out in [&low, &high] {
                prop_assert!(out.ranked.ids().all(|id| out.survivors.iter().any(|s| s == id)));
            }
        }
    }
}
