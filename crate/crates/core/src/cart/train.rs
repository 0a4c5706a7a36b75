use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::{midpoint_threshold, scan_class_lane, scan_sorted, sorted_column, validate_inputs};
use super::{DecisionTree, Labels, Node, NodeSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub depth_limit: usize,
    pub min_samples_split: usize,
    /// Number of features drawn per node; `None` uses all of them.
    pub feature_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            depth_limit: 3,
            min_samples_split: 2,
            feature_subsample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitStats {
    /// Split candidates whose gain was evaluated.
    pub candidates_evaluated: u64,
    pub nodes: usize,
}

/// Fits a tree on every row of `x`.
pub fn fit_tree(x: ArrayView2<f64>, labels: Labels, params: &TreeParams) -> Result<DecisionTree> {
    let rows = (0..x.nrows()).collect();
    fit_tree_instrumented(x, labels, rows, params).map(|(t, _)| t)
}

/// Fits a tree on the given rows; repeated rows count with multiplicity.
pub fn fit_tree_on_rows(
    x: ArrayView2<f64>,
    labels: Labels,
    rows: Vec<usize>,
    params: &TreeParams,
) -> Result<DecisionTree> {
    fit_tree_instrumented(x, labels, rows, params).map(|(t, _)| t)
}

pub fn fit_tree_instrumented(
    x: ArrayView2<f64>,
    labels: Labels,
    rows: Vec<usize>,
    params: &TreeParams,
) -> Result<(DecisionTree, FitStats)> {
    grow(x, labels, rows, params).map(|(t, stats, _)| (t, stats))
}

/// `(node, L, R)` per internal node.
type Gaps = Vec<(usize, f64, f64)>;

/// Fits a tree and also returns `(node, L, R)` for every internal node: the
/// largest training value sent left and the smallest sent right.
pub(crate) fn fit_tree_with_gaps(
    x: ArrayView2<f64>,
    labels: Labels,
    rows: Vec<usize>,
    params: &TreeParams,
) -> Result<(DecisionTree, Gaps)> {
    grow(x, labels, rows, params).map(|(t, _, gaps)| (t, gaps))
}

fn grow(
    x: ArrayView2<f64>,
    labels: Labels,
    rows: Vec<usize>,
    params: &TreeParams,
) -> Result<(DecisionTree, FitStats, Gaps)> {
    validate_inputs(&x, labels)?;
    if rows.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= x.nrows()) {
        return Err(Error::InvalidParameter(format!("row index {bad} out of range")));
    }
    let d = x.ncols();
    if d == 0 {
        return Err(Error::InvalidParameter("no features".into()));
    }
    if let Some(m) = params.feature_subsample {
        if m == 0 || m > d {
            return Err(Error::InvalidParameter(format!(
                "feature_subsample {m} not in 1..={d}"
            )));
        }
    }
    let mut builder = Builder::new(x, labels, &rows, params);
    builder.build(0, rows.len(), 0, 0);
    let stats = FitStats {
        candidates_evaluated: builder.evaluations,
        nodes: builder.nodes.len(),
    };
    let tree = DecisionTree::from_parts(
        labels.task(),
        d,
        labels.n_classes(),
        params.depth_limit,
        builder.nodes,
        rows,
    );
    Ok((tree, stats, builder.gaps))
}

struct Builder<'a> {
    labels: Labels<'a>,
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    /// Per feature, the node's rows sorted by that feature, stored contiguously per node.
    sorted_rows: Vec<Vec<usize>>,
    sorted_vals: Vec<Vec<f64>>,
    /// Class ids in the same order as `sorted_rows`; empty for regression.
    sorted_ids: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch_rows: Vec<usize>,
    scratch_vals: Vec<f64>,
    scratch_ids: Vec<u32>,
    nodes: Vec<Node>,
    gaps: Gaps,
    evaluations: u64,
}

impl<'a> Builder<'a> {
    fn new(x: ArrayView2<'a, f64>, labels: Labels<'a>, rows: &[usize], params: &'a TreeParams) -> Self {
        let (sorted_vals, sorted_rows): (Vec<_>, Vec<Vec<usize>>) =
            (0..x.ncols()).map(|f| sorted_column(&x, f, rows)).unzip();
        let sorted_ids = match labels {
            Labels::Classes { ids, .. } => sorted_rows
                .iter()
                .map(|col| col.iter().map(|&r| ids[r] as u32).collect())
                .collect(),
            Labels::Values(_) => Vec::new(),
        };
        Builder {
            labels,
            params,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            sorted_rows,
            sorted_vals,
            sorted_ids,
            goes_left: vec![false; x.nrows()],
            scratch_rows: Vec::with_capacity(rows.len()),
            scratch_vals: Vec::with_capacity(rows.len()),
            scratch_ids: Vec::new(),
            nodes: Vec::new(),
            gaps: Vec::new(),
            evaluations: 0,
        }
    }

    fn features(&mut self) -> Vec<usize> {
        let d = self.sorted_rows.len();
        match self.params.feature_subsample {
            Some(m) if m < d => {
                let mut f = rand::seq::index::sample(&mut self.rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    /// Grows the subtree over `start..end`; only feature `key` is known to be
    /// partitioned down to this node.
    fn build(&mut self, start: usize, end: usize, depth: usize, key: usize) -> usize {
        let idx = self.nodes.len();
        let n = end - start;
        let rows = &self.sorted_rows[key][start..end];
        let summary = NodeSummary::from_rows(self.labels, rows);
        self.nodes.push(Node::Leaf {
            prediction: summary.leaf_value(),
            sample_count: n,
        });
        if depth >= self.params.depth_limit || n < self.params.min_samples_split.max(2) || summary.is_pure() {
            return idx;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for f in self.features() {
            let vals = &self.sorted_vals[f][start..end];
            let found = match &summary {
                NodeSummary::Classes { counts, n } => scan_class_lane(
                    vals,
                    &self.sorted_ids[f][start..end - 1],
                    counts,
                    *n,
                    &mut self.evaluations,
                ),
                NodeSummary::Values { .. } => scan_sorted(
                    vals,
                    &self.sorted_rows[f][start..end],
                    self.labels,
                    &summary,
                    &mut self.evaluations,
                ),
            };
            if let Some((pos, gain)) = found {
                if best.is_none_or(|b| gain > b.2) {
                    best = Some((f, pos, gain));
                }
            }
        }
        let Some((feature, pos, _)) = best else {
            return idx;
        };
        let vals = &self.sorted_vals[feature];
        let (lo, hi) = (vals[start + pos], vals[start + pos + 1]);
        let threshold = midpoint_threshold(lo, hi);
        self.gaps.push((idx, lo, hi));
        let mid = start + pos + 1;
        let leaves_next = depth + 1 >= self.params.depth_limit && !self.sorted_ids.is_empty();
        let key = if leaves_next {
            feature
        } else {
            self.partition(start, mid, end, feature);
            0
        };
        let left = self.build(start, mid, depth + 1, key);
        let right = self.build(mid, end, depth + 1, key);
        self.nodes[idx] = Node::Internal {
            feature,
            threshold,
            left,
            right,
            sample_count: n,
        };
        idx
    }

    /// Stable-partitions every feature's segment so rows of the left child
    /// come first, preserving sorted order on both sides.
    fn partition(&mut self, start: usize, mid: usize, end: usize, feature: usize) {
        let split_rows = &self.sorted_rows[feature];
        for &r in &split_rows[start..mid] {
            self.goes_left[r] = true;
        }
        for &r in &split_rows[mid..end] {
            self.goes_left[r] = false;
        }
        for f in 0..self.sorted_rows.len() {
            if f == feature {
                continue;
            }
            let rows = &mut self.sorted_rows[f][start..end];
            let vals = &mut self.sorted_vals[f][start..end];
            self.scratch_rows.clear();
            self.scratch_vals.clear();
            self.scratch_ids.clear();
            let mut w = 0;
            if let Some(ids) = self.sorted_ids.get_mut(f) {
                let ids = &mut ids[start..end];
                for i in 0..rows.len() {
                    if self.goes_left[rows[i]] {
                        rows[w] = rows[i];
                        vals[w] = vals[i];
                        ids[w] = ids[i];
                        w += 1;
                    } else {
                        self.scratch_rows.push(rows[i]);
                        self.scratch_vals.push(vals[i]);
                        self.scratch_ids.push(ids[i]);
                    }
                }
                ids[w..].copy_from_slice(&self.scratch_ids);
            } else {
                for i in 0..rows.len() {
                    if self.goes_left[rows[i]] {
                        rows[w] = rows[i];
                        vals[w] = vals[i];
                        w += 1;
                    } else {
                        self.scratch_rows.push(rows[i]);
                        self.scratch_vals.push(vals[i]);
                    }
                }
            }
            rows[w..].copy_from_slice(&self.scratch_rows);
            vals[w..].copy_from_slice(&self.scratch_vals);
        }
    }
}
