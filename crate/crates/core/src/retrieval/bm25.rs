use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::RankedList;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Length normalization.
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over lowercased Unicode words (no stemming, no stopwords).
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build(docs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (doc, (id, body)) in docs.into_iter().enumerate() {
            let tokens = text::words(&body);
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push((doc as u32, n));
            }
            ids.push(id);
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avg_len = if ids.is_empty() {
            0.0
        } else {
            total as f64 / ids.len() as f64
        };
        Self {
            ids,
            doc_len,
            avg_len,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `ln((N − df + 0.5)/(df + 0.5) + 1)`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scores every document containing at least one query word. Each query
    /// token contributes, so a repeated word counts repeatedly.
    pub fn scores(&self, query: &str, params: Bm25Params) -> Vec<(String, f64)> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for term in text::words(query) {
            let Some(posting) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in posting {
                let tf = tf as f64;
                let norm = 1.0 - params.b + params.b * self.doc_len[doc as usize] as f64 / self.avg_len;
                *acc.entry(doc).or_default() += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
            }
        }
        acc.into_iter()
            .map(|(doc, s)| (self.ids[doc as usize].clone(), s))
            .collect()
    }

    pub fn rank(&self, query: &str, k: usize, params: Bm25Params, query_id: &str) -> RankedList {
        RankedList::from_scores(query_id, self.scores(query, params), Some(k))
    }
}

/// One-shot BM25 ranking of `corpus_texts` for `query`.
pub fn bm25_rank(corpus_texts: &BTreeMap<String, String>, query: &str, k: usize, params: Bm25Params) -> RankedList {
    Bm25Index::build(corpus_texts.iter().map(|(id, t)| (id.clone(), t.clone()))).rank(query, k, params, "")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(docs: &[(&str, &str)]) -> BTreeMap<String, String> {
        docs.iter().map(|(i, t)| (i.to_string(), t.to_string())).collect()
    }

    #[test]
    fn unique_match_ranks_first() {
        let c = corpus(&[("a", "dogs bark"), ("b", "a cat sleeps"), ("c", "birds sing")]);
        let r = bm25_rank(&c, "cat", 10, Bm25Params::default());
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["b"]);
    }

    #[test]
    fn no_corpus_terms_is_empty() {
        let c = corpus(&[("a", "dogs bark")]);
        assert!(bm25_rank(&c, "zebra", 10, Bm25Params::default()).is_empty());
        assert!(bm25_rank(&c, "!!!", 10, Bm25Params::default()).is_empty());
        assert!(bm25_rank(&BTreeMap::new(), "dogs", 10, Bm25Params::default()).is_empty());
    }

    #[test]
    fn idf_non_negative_even_for_ubiquitous_terms() {
        let idx = Bm25Index::build(vec![("a".into(), "x".into()), ("b".into(), "x".into())]);
        assert!(idx.idf("x") > 0.0);
    }

    proptest! {
        // With b = 0 the tf component ignores lengths, so a document without
        // the query word leaves the matching documents' order unchanged.
        #[test]
        fn insertion_of_non_matching_doc_keeps_order(
            docs in prop::collection::vec(prop::collection::vec(0u8..6, 1..12), 1..12),
            extra in prop::collection::vec(6u8..9, 1..30),
        ) {
            let render = |ws: &[u8]| ws.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
            let mut c: BTreeMap<String, String> =
                docs.iter().enumerate().map(|(i, d)| (format!("d{i:02}"), render(d))).collect();
            let params = Bm25Params { k1: 1.2, b: 0.0 };
            let before: Vec<String> = bm25_rank(&c, "w0", 100, params).ids().map(String::from).collect();
            c.insert("zz".into(), render(&extra));
            let after: Vec<String> = bm25_rank(&c, "w0", 100, params).ids().map(String::from).collect();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn scores_non_negative(docs in prop::collection::vec("[a-c ]{0,20}", 1..10), q in "[a-c ]{1,6}") {
            let c: BTreeMap<String, String> = docs.into_iter().enumerate().map(|(i, d)| (i.to_string(), d)).collect();
            let idx = Bm25Index::build(c.clone());
            for (_, s) in idx.scores(&q, Bm25Params::default()) {
                prop_assert!(s >= 0.0);
            }
        }
    }
}
