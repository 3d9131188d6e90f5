use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Records one binary decision.
    pub fn record(&mut self, gold_positive: bool, predicted_positive: bool) {
        match (gold_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// Macro scores over the two classes (positive, negative), each counted
    /// only when present in gold.
    pub fn macro_scores(&self) -> Option<MacroScores> {
        let classes = [(self.tp, self.fp, self.fn_), (self.tn, self.fn_, self.fp)];
        average(classes.into_iter().filter(|(tp, _, fn_)| tp + fn_ > 0))
    }
}

/// Unweighted means of per-class F1, precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn average(classes: impl Iterator<Item = (u64, u64, u64)>) -> Option<MacroScores> {
    let (mut f1, mut p, mut r, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (tp, fp, fn_) in classes {
        p += if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        r += tp as f64 / (tp + fn_) as f64;
        f1 += if tp == 0 {
            0.0
        } else {
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        };
        n += 1;
    }
    (n > 0).then(|| MacroScores {
        f1: f1 / n as f64,
        precision: p / n as f64,
        recall: r / n as f64,
    })
}

/// Macro F1/precision/recall over the classes present in `gold`. A class
/// never predicted has precision 0.
pub fn macro_prf<T: Ord>(gold: &[T], pred: &[T]) -> Result<MacroScores, MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let classes: BTreeSet<&T> = gold.iter().collect();
    let per_class = classes.into_iter().map(|c| {
        let mut counts = (0u64, 0u64, 0u64);
        for (g, p) in gold.iter().zip(pred) {
            match (g == c, p == c) {
                (true, true) => counts.0 += 1,
                (false, true) => counts.1 += 1,
                (true, false) => counts.2 += 1,
                (false, false) => {}
            }
        }
        counts
    });
    Ok(average(per_class).expect("gold is non-empty"))
}

/// `(tn/(tn+fp), fn/(fn+tp))`; `None` where the denominator is zero.
pub fn tnr_fnr(c: ConfusionCounts) -> (Option<f64>, Option<f64>) {
    let tnr = (c.tn + c.fp > 0).then(|| c.tn as f64 / (c.tn + c.fp) as f64);
    let fnr = (c.fn_ + c.tp > 0).then(|| c.fn_ as f64 / (c.fn_ + c.tp) as f64);
    (tnr, fnr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenPoint {
    /// Predict positive when `score >= threshold`; may be ±∞.
    pub threshold: f64,
    /// TPR + TNR − 1.
    pub j: f64,
}

/// Threshold maximizing Youden's J over −∞, +∞ and the midpoints between
/// adjacent distinct scores. Ties go to the smallest threshold.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<YoudenPoint, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            gold: labels.len(),
            pred: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore);
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // J scaled by pos·neg stays integral, so comparisons are exact.
    let scaled = |tp: u64, tn: u64| (tp * neg + tn * pos) as i128 - (pos * neg) as i128;
    let j_of = |tp: u64, tn: u64| tp as f64 / pos as f64 + tn as f64 / neg as f64 - 1.0;

    // Threshold −∞: everything predicted positive.
    let (mut tp, mut tn) = (pos, 0u64);
    let mut best = (scaled(tp, tn), f64::NEG_INFINITY, tp, tn);
    let mut i = 0;
    while i < pairs.len() {
        let value = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == value {
            if pairs[i].1 {
                tp -= 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
        let threshold = if i < pairs.len() {
            (value + pairs[i].0) / 2.0
        } else {
            f64::INFINITY
        };
        let s = scaled(tp, tn);
        if s > best.0 {
            best = (s, threshold, tp, tn);
        }
    }
    Ok(YoudenPoint {
        threshold: best.1,
        j: j_of(best.2, best.3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VeracityLabel::{False as F, True as T, Unverifiable as U};
    use proptest::prelude::*;

    #[test]
    fn macro_prf_examples() {
        let all = [F, T, U, F];
        assert_eq!(
            macro_prf(&all, &all).unwrap(),
            MacroScores {
                f1: 1.0,
                precision: 1.0,
                recall: 1.0
            }
        );
        let m = macro_prf(&[F, F, T, U], &[F, T, T, U]).unwrap();
        assert!((m.f1 - 7.0 / 9.0).abs() < 1e-15);
        assert!((m.precision - 2.5 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.5 / 3.0).abs() < 1e-15);
        let miss = macro_prf(&[F, F, F], &[T, T, T]).unwrap();
        assert_eq!(miss.f1, 0.0);
        assert!(matches!(
            macro_prf(&[F], &[F, T]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert_eq!(macro_prf::<u8>(&[], &[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn single_label_on_imbalanced_set() {
        let gold: Vec<_> = [F; 8].into_iter().chain([T, U]).collect();
        let m = macro_prf(&gold, &[F; 10]).unwrap();
        // False: P = 0.8, R = 1, F1 = 16/18; True and Unverifiable score 0.
        assert!((m.f1 - (16.0 / 18.0) / 3.0).abs() < 1e-15);
        assert!((m.precision - 0.8 / 3.0).abs() < 1e-15);
        assert!((m.recall - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tnr_fnr_examples() {
        let (tnr, fnr) = tnr_fnr(ConfusionCounts {
            tp: 10,
            fp: 5,
            tn: 85,
            fn_: 0,
        });
        assert_eq!(tnr, Some(85.0 / 90.0));
        assert_eq!(fnr, Some(0.0));
        assert_eq!(
            tnr_fnr(ConfusionCounts {
                tp: 3,
                fp: 0,
                tn: 7,
                fn_: 0
            }),
            (Some(1.0), Some(0.0))
        );
        assert_eq!(
            tnr_fnr(ConfusionCounts {
                tp: 3,
                fp: 0,
                tn: 0,
                fn_: 1
            })
            .0,
            None
        );
        assert_eq!(tnr_fnr(ConfusionCounts::default()), (None, None));
    }

    #[test]
    fn binary_macro_from_confusion() {
        let c = ConfusionCounts {
            tp: 1,
            fp: 1,
            tn: 2,
            fn_: 0,
        };
        let m = c.macro_scores().unwrap();
        // positive F1 = 2/3, negative F1 = 4/5.
        assert!((m.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!(ConfusionCounts::default().macro_scores().is_none());
    }

    #[test]
    fn youden_examples() {
        let p = youden_threshold(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(p, YoudenPoint { threshold: 0.5, j: 1.0 });

        let inverted = youden_threshold(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(
            inverted,
            YoudenPoint {
                threshold: f64::NEG_INFINITY,
                j: 0.0
            }
        );

        let flat = youden_threshold(&[0.5; 4], &[true, false, true, false]).unwrap();
        assert_eq!(
            flat,
            YoudenPoint {
                threshold: f64::NEG_INFINITY,
                j: 0.0
            }
        );

        assert_eq!(
            youden_threshold(&[0.1, 0.2], &[true, true]),
            Err(MetricError::SingleClass)
        );
        assert_eq!(
            youden_threshold(&[f64::NAN, 0.2], &[true, false]),
            Err(MetricError::NonFiniteScore)
        );
    }

    fn exhaustive_youden(scores: &[f64], labels: &[bool]) -> (f64, f64) {
        let pos = labels.iter().filter(|l| **l).count() as f64;
        let neg = labels.len() as f64 - pos;
        let mut distinct = scores.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut candidates = vec![f64::NEG_INFINITY];
        candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        candidates.push(f64::INFINITY);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in candidates {
            let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count() as f64;
            let tn = scores.iter().zip(labels).filter(|(s, l)| !**l && **s < t).count() as f64;
            let j = tp / pos + tn / neg - 1.0;
            if j > best.1 + 1e-12 || best.0 == f64::NEG_INFINITY && t == f64::NEG_INFINITY {
                best = (t, j);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn youden_matches_exhaustive_scan(
            data in prop::collection::vec((0i32..8, any::<bool>()), 2..40)
                .prop_filter("both classes", |d| d.iter().any(|x| x.1) && d.iter().any(|x| !x.1))
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 4.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let got = youden_threshold(&scores, &labels).unwrap();
            let (t, j) = exhaustive_youden(&scores, &labels);
            prop_assert_eq!(got.threshold, t);
            prop_assert!((got.j - j).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got.j));
        }
    }
}
