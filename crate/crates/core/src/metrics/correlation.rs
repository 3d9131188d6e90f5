use std::collections::HashMap;

/// Positions (0-based) of ids common to both lists, as `(rank_a, rank_b)`
/// re-ranked 1..m within the intersection.
fn common_ranks<S: AsRef<str>>(a: &[S], b: &[S]) -> (Vec<f64>, Vec<f64>) {
    let pos_b: HashMap<&str, usize> = b.iter().enumerate().map(|(i, id)| (id.as_ref(), i)).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, id) in a.iter().enumerate() {
        if let Some(&j) = pos_b.get(id.as_ref()) {
            if seen.insert(id.as_ref()) {
                pairs.push((i, j));
            }
        }
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
    (fractional_ranks(&xs), fractional_ranks(&ys))
}

/// 1-based ranks with ties sharing their average rank.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation of paired values (fractional ranks for ties).
/// `None` with fewer than two pairs or a constant side.
pub fn spearman_from_values(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

/// Spearman correlation of two ranked id lists over their common ids.
pub fn spearman<S: AsRef<str>>(rank_a: &[S], rank_b: &[S]) -> Option<f64> {
    let (x, y) = common_ranks(rank_a, rank_b);
    if x.len() < 2 {
        return None;
    }
    pearson(&x, &y)
}

/// Kendall tau-b of paired values in O(n log n): sort by `(x, y)`, then
/// count the exchanges a merge sort on `y` needs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tie_pairs = |eq: &dyn Fn(usize, usize) -> bool, len: usize| -> u64 {
        let mut total = 0u64;
        let mut run = 1u64;
        for i in 1..len {
            if eq(i - 1, i) {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let x_ties = tie_pairs(&|i, j| pairs[i].0 == pairs[j].0, pairs.len());
    let joint_ties = tie_pairs(
        &|i, j| pairs[i].0 == pairs[j].0 && pairs[i].1 == pairs[j].1,
        pairs.len(),
    );

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys);
    let y_ties = tie_pairs(&|i, j| ys[i] == ys[j], ys.len());

    let total = n * (n - 1) / 2;
    let numerator = total as i128 - x_ties as i128 - y_ties as i128 + joint_ties as i128 - 2 * swaps as i128;
    let denominator = ((total - x_ties) as f64 * (total - y_ties) as f64).sqrt();
    (denominator > 0.0).then(|| (numerator as f64 / denominator).clamp(-1.0, 1.0))
}

/// Sorts ascending, returning the number of strictly inverted pairs.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall tau-b of two ranked id lists over their common ids.
pub fn kendall_tau<S: AsRef<str>>(rank_a: &[S], rank_b: &[S]) -> Option<f64> {
    let (x, y) = common_ranks(rank_a, rank_b);
    kendall_tau_b(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spearman_examples() {
        let a = ["a", "b", "c", "d", "e"];
        assert_eq!(spearman(&a, &a), Some(1.0));
        let rev: Vec<&str> = a.iter().rev().copied().collect();
        assert_eq!(spearman(&a, &rev), Some(-1.0));
        let s = spearman(&["x", "y", "z", "w"], &["y", "x", "z", "w"]).unwrap();
        assert!((s - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&["x"], &["x"]), None);
        assert_eq!(spearman(&["x", "y"], &["p", "q"]), None);
    }

    #[test]
    fn intersection_is_reranked() {
        // Common ids {b, c} appear in the same relative order.
        assert_eq!(spearman(&["a", "b", "z", "c"], &["c0", "b", "c", "q"]), Some(1.0));
    }

    #[test]
    fn kendall_examples() {
        let a = ["a", "b", "c", "d", "e"];
        assert_eq!(kendall_tau(&a, &a), Some(1.0));
        let rev: Vec<&str> = a.iter().rev().copied().collect();
        assert_eq!(kendall_tau(&a, &rev), Some(-1.0));
        let t = kendall_tau(&["x", "y", "z", "w"], &["y", "x", "z", "w"]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_with_ties() {
        // x ties: (1,2); y ties: (0,1). Hand count: C = 3, D = 1 over n0 = 6,
        // n1 = 1, n2 = 1 → (3 − 1)/sqrt(5 · 5) = 0.4.
        let t = kendall_tau_b(&[1.0, 2.0, 2.0, 3.0], &[1.0, 1.0, 3.0, 2.0]).unwrap();
        assert!((t - 0.4).abs() < 1e-12, "{t}");
        assert_eq!(kendall_tau_b(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn fractional_ranks_average_ties() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
        Just((0..n).collect::<Vec<_>>()).prop_shuffle()
    }

    fn pair_counting_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
                tx += i64::from(dx == 0.0);
                ty += i64::from(dy == 0.0);
                if dx != 0.0 && dy != 0.0 {
                    if (dx > 0.0) == (dy > 0.0) {
                        c += 1;
                    } else {
                        d += 1;
                    }
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as i64;
        let denom = ((n0 - tx) * (n0 - ty)) as f64;
        (denom > 0.0).then(|| (c - d) as f64 / denom.sqrt())
    }

    proptest! {
        #[test]
        fn sign_flips_under_reversal((a, b) in (2usize..30).prop_flat_map(|n| (permutation(n), permutation(n)))) {
            let a: Vec<String> = a.iter().map(|i| format!("id{i}")).collect();
            let b: Vec<String> = b.iter().map(|i| format!("id{i}")).collect();
            let rev: Vec<String> = b.iter().rev().cloned().collect();
            let (s, sr) = (spearman(&a, &b).unwrap(), spearman(&a, &rev).unwrap());
            prop_assert!((s + sr).abs() < 1e-12);
            let (t, tr) = (kendall_tau(&a, &b).unwrap(), kendall_tau(&a, &rev).unwrap());
            prop_assert!((t + tr).abs() < 1e-12);
        }

        #[test]
        fn tau_b_matches_pair_counting(perm in (2usize..=200).prop_flat_map(permutation), ties in 0usize..3) {
            let x: Vec<f64> = (0..perm.len()).map(|i| i as f64).collect();
            let y: Vec<f64> = perm.iter().map(|&v| if ties == 0 { v as f64 } else { (v / (ties + 1)) as f64 }).collect();
            match (kendall_tau_b(&x, &y), pair_counting_tau_b(&x, &y)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
