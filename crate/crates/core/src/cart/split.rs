use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{gini_gain, Labels, NodeSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Midpoint of two adjacent distinct sorted values, kept strictly below `hi`.
pub(crate) fn midpoint_threshold(lo: f64, hi: f64) -> f64 {
    let mid = (lo + hi) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

/// Sweeps samples sorted by value and returns the boundary position `i`
/// (left side is `..=i`) with the largest strictly positive gain.
/// Only boundaries between distinct values are evaluated.
pub(crate) fn scan_sorted(
    vals: &[f64],
    rows: &[usize],
    labels: Labels,
    summary: &NodeSummary,
    evaluations: &mut u64,
) -> Option<(usize, f64)> {
    if let (NodeSummary::Classes { counts, n }, Labels::Classes { ids, .. }) = (summary, labels) {
        return scan_classes(vals, rows, ids, counts, *n, evaluations);
    }
    let mut tally = summary.tally();
    let mut best: Option<(usize, f64)> = None;
    let mut best_gain = 0.0;
    for i in 0..vals.len().saturating_sub(1) {
        tally.move_left(labels, rows[i]);
        if vals[i] < vals[i + 1] {
            *evaluations += 1;
            let g = tally.gain();
            if g > best_gain {
                best_gain = g;
                best = Some((i, g));
            }
        }
    }
    best
}

/// [`scan_sorted`] for class labels, with the tally kept in locals.
fn scan_classes(
    vals: &[f64],
    rows: &[usize],
    ids: &[usize],
    counts: &[u64],
    n: u64,
    evaluations: &mut u64,
) -> Option<(usize, f64)> {
    let m = vals.len().saturating_sub(1);
    let lane: Vec<u32> = rows[..m].iter().map(|&r| ids[r] as u32).collect();
    scan_class_lane(vals, &lane, counts, n, evaluations)
}

/// Class sweep over ids laid out in the same order as `vals`.
pub(crate) fn scan_class_lane(
    vals: &[f64],
    lane: &[u32],
    counts: &[u64],
    n: u64,
    evaluations: &mut u64,
) -> Option<(usize, f64)> {
    let mut left = vec![0u64; counts.len()];
    let mut right = counts.to_vec();
    let sq_parent: u64 = counts.iter().map(|c| c * c).sum();
    let (mut sq_left, mut sq_right) = (0u64, sq_parent);
    let mut best: Option<(usize, f64)> = None;
    let mut best_gain = 0.0;
    for (i, (pair, &c)) in vals.windows(2).zip(lane).enumerate() {
        let c = c as usize;
        sq_left += 2 * left[c] + 1;
        left[c] += 1;
        sq_right -= 2 * right[c] - 1;
        right[c] -= 1;
        if pair[0] < pair[1] {
            *evaluations += 1;
            let g = gini_gain(n, i as u64 + 1, sq_parent, sq_left, sq_right);
            if g > best_gain {
                best_gain = g;
                best = Some((i, g));
            }
        }
    }
    best
}

pub(crate) fn validate_inputs(x: &ArrayView2<f64>, labels: Labels) -> Result<()> {
    if labels.len() != x.nrows() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if !x.iter().all(|v| v.is_finite()) {
        if let Some(((row, col), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
    }
    if let Labels::Values(v) = labels {
        if let Some(row) = v.iter().position(|y| !y.is_finite()) {
            return Err(Error::NonFinite { row, col: x.ncols() });
        }
    }
    Ok(())
}

fn check_features(features: &[usize], d: usize) -> Result<Vec<usize>> {
    let mut f = features.to_vec();
    f.sort_unstable();
    f.dedup();
    if let Some(&bad) = f.iter().find(|&&j| j >= d) {
        return Err(Error::InvalidParameter(format!("feature {bad} out of range for {d} features")));
    }
    Ok(f)
}

/// Integer key with the same order as [`f64::total_cmp`].
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Values of `feature` over `rows`, sorted by value then row index.
///
/// Each `u64` sort key holds the value's order bits above the row index. Keys
/// that share those truncated bits are re-sorted exactly afterwards.
pub(crate) fn sorted_column(x: &ArrayView2<f64>, feature: usize, rows: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let value = |r: usize| x[[r, feature]];
    let row_bits = usize::BITS - rows.iter().max().copied().unwrap_or(0).leading_zeros();
    if row_bits > 32 {
        let mut keys: Vec<(u64, usize)> = rows.iter().map(|&r| (order_key(value(r)), r)).collect();
        keys.sort_unstable();
        return keys.into_iter().map(|(_, r)| (value(r), r)).unzip();
    }
    let mask = (1u64 << row_bits) - 1;
    let mut keys: Vec<u64> = rows.iter().map(|&r| (order_key(value(r)) & !mask) | r as u64).collect();
    keys.sort_unstable();
    let mut sorted: Vec<usize> = keys.iter().map(|k| (k & mask) as usize).collect();
    let mut start = 0;
    for run in keys.chunk_by(|a, b| a & !mask == b & !mask) {
        if run.len() > 1 {
            sorted[start..start + run.len()].sort_unstable_by_key(|&r| (order_key(value(r)), r));
        }
        start += run.len();
    }
    let vals = sorted.iter().map(|&r| value(r)).collect();
    (vals, sorted)
}

/// Best split over `allowed_features` on all rows of `x`, or `None` when no
/// split has positive gain.
pub fn best_split(x: ArrayView2<f64>, labels: Labels, allowed_features: &[usize]) -> Result<Option<SplitCandidate>> {
    validate_inputs(&x, labels)?;
    let features = check_features(allowed_features, x.ncols())?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let summary = NodeSummary::from_rows(labels, &rows);
    let mut evaluations = 0;
    let mut best: Option<SplitCandidate> = None;
    for f in features {
        let (vals, sorted) = sorted_column(&x, f, &rows);
        if let Some((i, gain)) = scan_sorted(&vals, &sorted, labels, &summary, &mut evaluations) {
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: midpoint_threshold(vals[i], vals[i + 1]),
                    gain,
                });
            }
        }
    }
    Ok(best)
}

/// Every boundary between distinct sorted values for each feature, in
/// ascending feature then threshold order, including zero-gain candidates.
pub fn candidate_splits(x: ArrayView2<f64>, labels: Labels, features: &[usize]) -> Result<Vec<SplitCandidate>> {
    validate_inputs(&x, labels)?;
    let features = check_features(features, x.ncols())?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let summary = NodeSummary::from_rows(labels, &rows);
    let mut out = Vec::new();
    for f in features {
        let (vals, sorted) = sorted_column(&x, f, &rows);
        let mut tally = summary.tally();
        for i in 0..vals.len().saturating_sub(1) {
            tally.move_left(labels, sorted[i]);
            if vals[i] < vals[i + 1] {
                out.push(SplitCandidate {
                    feature: f,
                    threshold: midpoint_threshold(vals[i], vals[i + 1]),
                    gain: tally.gain(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    proptest! {
        #[test]
        fn sorted_column_matches_a_comparison_sort(
            raw in proptest::collection::vec((0u8..4, -3i64..3), 1..80),
            rows in proptest::collection::vec(0usize..80, 1..120),
        ) {
            // Values crowd into a few groups that share their high bits.
            let vals: Vec<f64> = raw.iter().map(|&(g, t)| 0.25 * g as f64 + t as f64 * 1e-15).collect();
            let rows: Vec<usize> = rows.into_iter().map(|r| r % vals.len()).collect();
            let x = ndarray::Array2::from_shape_vec((vals.len(), 1), vals.clone()).unwrap();
            let (v, r) = super::sorted_column(&x.view(), 0, &rows);
            let mut expected: Vec<(f64, usize)> = rows.iter().map(|&i| (vals[i], i)).collect();
            expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            prop_assert_eq!(r, expected.iter().map(|p| p.1).collect::<Vec<_>>());
            prop_assert_eq!(v, expected.iter().map(|p| p.0).collect::<Vec<_>>());
        }
    }

    #[test]
    fn sorted_column_orders_by_value_then_row() {
        let vals = [3.0, -0.0, f64::MAX, 0.0, -1.5, 1e-300, -0.0, -f64::MAX, 0.25, 3.0];
        let x = ndarray::Array2::from_shape_vec((vals.len(), 1), vals.to_vec()).unwrap();
        let rows: Vec<usize> = vec![9, 0, 3, 1, 2, 4, 5, 6, 7, 8, 0];
        let (v, r) = super::sorted_column(&x.view(), 0, &rows);
        let mut expected: Vec<(f64, usize)> = rows.iter().map(|&i| (vals[i], i)).collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        assert_eq!(r, expected.iter().map(|p| p.1).collect::<Vec<_>>());
        assert!(v.iter().zip(&expected).all(|(a, b)| a.to_bits() == b.0.to_bits()));
    }


    use super::*;
    use crate::cart::information_gain;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn best_split_example() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = [0, 0, 1, 1];
        let s = best_split(x.view(), Labels::classes(&y), &[0]).unwrap().unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 2.5);
        assert_eq!(s.gain, 0.5);
    }

    #[test]
    fn no_split_on_constant_feature_or_pure_labels() {
        let x = array![[1.0], [1.0], [1.0]];
        assert!(best_split(x.view(), Labels::classes(&[0, 1, 0]), &[0]).unwrap().is_none());
        let x = array![[1.0], [2.0], [3.0]];
        assert!(best_split(x.view(), Labels::classes(&[1, 1, 1]), &[0]).unwrap().is_none());
    }

    #[test]
    fn ties_go_to_lower_feature() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        let s = best_split(x.view(), Labels::classes(&[0, 0, 1, 1]), &[1, 0]).unwrap().unwrap();
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn midpoint_stays_below_upper_value() {
        let lo = 1.0_f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        assert_eq!(midpoint_threshold(lo, hi), lo);
        assert_eq!(midpoint_threshold(1.0, 2.0), 1.5);
    }

    #[test]
    fn rejects_bad_input() {
        let x = array![[1.0], [f64::NAN]];
        assert!(matches!(
            best_split(x.view(), Labels::classes(&[0, 1]), &[0]),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
        let x = array![[1.0], [2.0]];
        assert!(best_split(x.view(), Labels::classes(&[0]), &[0]).is_err());
        assert!(best_split(x.view(), Labels::classes(&[0, 1]), &[3]).is_err());
    }

    fn brute_force(x: &Array2<f64>, y: &[usize]) -> Vec<SplitCandidate> {
        let mut out = Vec::new();
        for f in 0..x.ncols() {
            let mut vals: Vec<f64> = x.column(f).to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = midpoint_threshold(w[0], w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| x[[i, f]] <= t);
                let yl: Vec<usize> = l.iter().map(|&i| y[i]).collect();
                let yr: Vec<usize> = r.iter().map(|&i| y[i]).collect();
                let n_classes = y.iter().max().unwrap() + 1;
                let gain = information_gain(
                    Labels::Classes { ids: y, n_classes },
                    Labels::Classes { ids: &yl, n_classes },
                    Labels::Classes { ids: &yr, n_classes },
                )
                .unwrap();
                out.push(SplitCandidate { feature: f, threshold: t, gain });
            }
        }
        out
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(
            data in prop::collection::vec((0i32..6, 0i32..6, 0usize..3), 2..40)
        ) {
            let x = Array2::from_shape_fn((data.len(), 2), |(i, j)| {
                (if j == 0 { data[i].0 } else { data[i].1 }) as f64 * 0.5
            });
            let y: Vec<usize> = data.iter().map(|d| d.2).collect();
            let fast = candidate_splits(x.view(), Labels::classes(&y), &[0, 1]).unwrap();
            let slow = brute_force(&x, &y);
            prop_assert_eq!(&fast, &slow);
            let mut expected: Option<SplitCandidate> = None;
            for c in &slow {
                if c.gain > expected.map_or(0.0, |e| e.gain) {
                    expected = Some(*c);
                }
            }
            prop_assert_eq!(best_split(x.view(), Labels::classes(&y), &[0, 1]).unwrap(), expected);
        }
    }
}
