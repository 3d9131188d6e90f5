use serde::{Deserialize, Serialize};

use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Either side had no words; all scores are 0.
    pub empty_input: bool,
}

/// ROUGE-L between a candidate and a reference, on lowercased Unicode
/// words.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let c = text::words(candidate);
    let r = text::words(reference);
    if c.is_empty() || r.is_empty() {
        tracing::warn!("rouge-l on empty input; scoring 0");
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            empty_input: true,
        };
    }
    let l = lcs_len(&c, &r) as f64;
    RougeScore {
        precision: l / c.len() as f64,
        recall: l / r.len() as f64,
        f1: 2.0 * l / (c.len() + r.len()) as f64,
        empty_input: false,
    }
}

pub(crate) fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}
