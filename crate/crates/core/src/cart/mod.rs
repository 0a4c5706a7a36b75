//! Euclidean CART engine.
//!
//! Splits are axis-parallel with the rule `x[feature] <= threshold` going
//! left. Classification uses Gini impurity, regression uses the variance.
//! Split search is exact and deterministic: features are scanned in
//! ascending order, thresholds in ascending order, and a candidate replaces
//! the incumbent only on a strictly larger gain.

mod split;
mod train;

pub use split::{best_split, candidate_splits, SplitCandidate};
pub use train::{fit_tree, fit_tree_instrumented, fit_tree_on_rows, FitStats, TreeParams};
pub(crate) use train::fit_tree_with_gaps;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::InvalidParameter(format!("unknown task '{other}'"))),
        }
    }
}

/// Borrowed training targets, indexed by row.
#[derive(Debug, Clone, Copy)]
pub enum Labels<'a> {
    Classes { ids: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

impl<'a> Labels<'a> {
    /// Class labels with `n_classes = max(id) + 1`.
    pub fn classes(ids: &'a [usize]) -> Self {
        let n_classes = ids.iter().max().map_or(0, |m| m + 1);
        Labels::Classes { ids, n_classes }
    }

    pub fn classes_with_count(ids: &'a [usize], n_classes: usize) -> Result<Self> {
        if let Some(bad) = ids.iter().find(|&&c| c >= n_classes) {
            return Err(Error::InvalidParameter(format!(
                "class id {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Labels::Classes { ids, n_classes })
    }

    pub fn values(values: &'a [f64]) -> Self {
        Labels::Values(values)
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { ids, .. } => ids.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Labels::Classes { .. } => Task::Classification,
            Labels::Values(_) => Task::Regression,
        }
    }

    /// Number of classes, or 0 for regression targets.
    pub fn n_classes(&self) -> usize {
        match self {
            Labels::Classes { n_classes, .. } => *n_classes,
            Labels::Values(_) => 0,
        }
    }
}

/// Owned training targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn labels(&self) -> Labels<'_> {
        match self {
            Targets::Classes(c) => Labels::classes(c),
            Targets::Values(v) => Labels::values(v),
        }
    }

    pub fn len(&self) -> usize {
        self.labels().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        self.labels().task()
    }

    /// Targets of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
            Targets::Values(v) => Targets::Values(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Owned predictions of a tree, forest or reference model.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Classes(c) => c.len(),
            Predictions::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_classes(&self) -> Option<&[usize]> {
        match self {
            Predictions::Classes(c) => Some(c),
            Predictions::Values(_) => None,
        }
    }

    pub fn as_values(&self) -> Option<&[f64]> {
        match self {
            Predictions::Values(v) => Some(v),
            Predictions::Classes(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LeafValue {
    /// Class probabilities.
    Distribution(Vec<f64>),
    /// Regression mean.
    Mean(f64),
}

impl LeafValue {
    /// Argmax class, ties to the lower class id.
    pub fn class(&self) -> usize {
        match self {
            LeafValue::Distribution(p) => argmax(p),
            LeafValue::Mean(m) => *m as usize,
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            LeafValue::Distribution(p) => argmax(p) as f64,
            LeafValue::Mean(m) => *m,
        }
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        sample_count: usize,
    },
    Leaf {
        prediction: LeafValue,
        sample_count: usize,
    },
}

impl Node {
    pub fn sample_count(&self) -> usize {
        match self {
            Node::Internal { sample_count, .. } | Node::Leaf { sample_count, .. } => *sample_count,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// A fitted tree stored as a preorder node arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    task: Task,
    n_features: usize,
    n_classes: usize,
    depth_limit: usize,
    nodes: Vec<Node>,
    /// Rows (with multiplicity) this tree was fitted on. Absent for trees
    /// that were not fitted in-process.
    #[serde(skip)]
    training_indices: Option<Vec<usize>>,
}

impl DecisionTree {
    /// Assembles a tree from an externally produced node arena.
    pub fn from_nodes(
        task: Task,
        n_features: usize,
        n_classes: usize,
        depth_limit: usize,
        nodes: Vec<Node>,
    ) -> Result<Self> {
        validate_arena(&nodes, task, n_features, n_classes)?;
        let tree = DecisionTree {
            task,
            n_features,
            n_classes,
            depth_limit,
            nodes,
            training_indices: None,
        };
        if tree.depth() > depth_limit {
            return Err(Error::MalformedTree(format!(
                "depth {} exceeds limit {depth_limit}",
                tree.depth()
            )));
        }
        Ok(tree)
    }

    pub(crate) fn from_parts(
        task: Task,
        n_features: usize,
        n_classes: usize,
        depth_limit: usize,
        nodes: Vec<Node>,
        training_indices: Vec<usize>,
    ) -> Self {
        DecisionTree {
            task,
            n_features,
            n_classes,
            depth_limit,
            nodes,
            training_indices: Some(training_indices),
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn depth_limit(&self) -> usize {
        self.depth_limit
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn training_indices(&self) -> Option<&[usize]> {
        self.training_indices.as_deref()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Length of the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Replaces the threshold of internal node `node`.
    pub fn set_threshold(&mut self, node: usize, value: f64) -> Result<()> {
        match self.nodes.get_mut(node) {
            Some(Node::Internal { threshold, .. }) if value.is_finite() => {
                *threshold = value;
                Ok(())
            }
            Some(Node::Internal { .. }) => Err(Error::InvalidParameter(format!(
                "threshold {value} is not finite"
            ))),
            _ => Err(Error::MalformedTree(format!("node {node} is not an internal node"))),
        }
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn check_columns(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn leaf_value(&self, i: usize) -> &LeafValue {
        match &self.nodes[i] {
            Node::Leaf { prediction, .. } => prediction,
            Node::Internal { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    /// Leaf index for every row of `x`.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        self.check_columns(&x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| match row.as_slice() {
                Some(s) => self.leaf_index(s),
                None => self.leaf_index(&row.to_vec()),
            })
            .collect())
    }

    /// Class argmax (ties to the lower id) or regression mean per row.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Predictions> {
        let leaves = self.apply(x)?;
        Ok(self.predictions_from_leaves(&leaves))
    }

    pub(crate) fn predictions_from_leaves(&self, leaves: &[usize]) -> Predictions {
        match self.task {
            Task::Classification => {
                Predictions::Classes(leaves.iter().map(|&l| self.leaf_value(l).class()).collect())
            }
            Task::Regression => {
                Predictions::Values(leaves.iter().map(|&l| self.leaf_value(l).value()).collect())
            }
        }
    }

    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.task != Task::Classification {
            return Err(Error::TaskMismatch("probabilities need a classification tree".into()));
        }
        let leaves = self.apply(x)?;
        let mut out = Array2::zeros((leaves.len(), self.n_classes));
        for (r, &l) in leaves.iter().enumerate() {
            if let LeafValue::Distribution(p) = self.leaf_value(l) {
                for (c, &v) in p.iter().enumerate() {
                    out[[r, c]] = v;
                }
            }
        }
        Ok(out)
    }
}

fn validate_arena(nodes: &[Node], task: Task, n_features: usize, n_classes: usize) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::MalformedTree("tree has no nodes".into()));
    }
    let mut referenced = vec![false; nodes.len()];
    referenced[0] = true;
    for (i, node) in nodes.iter().enumerate() {
        match node {
            Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if *feature >= n_features {
                    return Err(Error::MalformedTree(format!("node {i}: feature {feature} out of range")));
                }
                if !threshold.is_finite() {
                    return Err(Error::MalformedTree(format!("node {i}: non-finite threshold")));
                }
                for &child in [left, right] {
                    if child <= i || child >= nodes.len() || referenced[child] {
                        return Err(Error::MalformedTree(format!("node {i}: bad child {child}")));
                    }
                    referenced[child] = true;
                }
            }
            Node::Leaf { prediction, .. } => match (task, prediction) {
                (Task::Classification, LeafValue::Distribution(p)) if p.len() == n_classes => {}
                (Task::Regression, LeafValue::Mean(m)) if m.is_finite() => {}
                _ => {
                    return Err(Error::MalformedTree(format!(
                        "node {i}: leaf value does not match {task} with {n_classes} classes"
                    )))
                }
            },
        }
    }
    if let Some(orphan) = referenced.iter().position(|r| !r) {
        return Err(Error::MalformedTree(format!("node {orphan} is unreachable")));
    }
    Ok(())
}

/// Gini impurity `1 - sum_c (n_c / n)^2`, evaluated from the integer sum of squared counts.
#[inline]
pub(crate) fn gini(sum_sq: u64, n: u64) -> f64 {
    let n = n as f64;
    1.0 - sum_sq as f64 / (n * n)
}

/// Gini gain `G(p) - (n_l/n) G(l) - (n_r/n) G(r)` over the common
/// denominator `n^2 n_l n_r`. The numerator is computed exactly while
/// `n^4 < 2^53`, so uninformative splits then score exactly zero.
#[inline]
pub(crate) fn gini_gain(n: u64, n_left: u64, sq_parent: u64, sq_left: u64, sq_right: u64) -> f64 {
    let n_right = n - n_left;
    if n_left == 0 || n_right == 0 {
        return 0.0;
    }
    // Counts are far below 2^63, and the signed conversion is a single instruction.
    let f = |v: u64| v as i64 as f64;
    let (n, nl, nr) = (f(n), f(n_left), f(n_right));
    let num = n * (f(sq_left) * nr + f(sq_right) * nl) - f(sq_parent) * (nl * nr);
    num / (n * n * (nl * nr))
}

/// Variance reduction `(S_l^2/n_l + S_r^2/n_r - S^2/n) / n`.
#[inline]
pub(crate) fn variance_gain(total: f64, n: u64, sum_left: f64, n_left: u64) -> f64 {
    let n_right = n - n_left;
    let sum_right = total - sum_left;
    (sum_left * sum_left / n_left as f64 + sum_right * sum_right / n_right as f64
        - total * total / n as f64)
        / n as f64
}

/// Aggregate targets of one node.
#[derive(Debug, Clone)]
pub(crate) enum NodeSummary {
    Classes { counts: Vec<u64>, n: u64 },
    Values { sum: f64, n: u64, min: f64, max: f64 },
}

impl NodeSummary {
    pub(crate) fn from_rows(labels: Labels, rows: &[usize]) -> Self {
        match labels {
            Labels::Classes { ids, n_classes } => {
                let mut counts = vec![0u64; n_classes];
                for &r in rows {
                    counts[ids[r]] += 1;
                }
                NodeSummary::Classes {
                    counts,
                    n: rows.len() as u64,
                }
            }
            Labels::Values(v) => {
                let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
                for &r in rows {
                    sum += v[r];
                    min = min.min(v[r]);
                    max = max.max(v[r]);
                }
                NodeSummary::Values {
                    sum,
                    n: rows.len() as u64,
                    min,
                    max,
                }
            }
        }
    }

    pub(crate) fn is_pure(&self) -> bool {
        match self {
            NodeSummary::Classes { counts, n } => counts.contains(n),
            NodeSummary::Values { min, max, .. } => min == max,
        }
    }

    pub(crate) fn leaf_value(&self) -> LeafValue {
        match self {
            NodeSummary::Classes { counts, n } => {
                let n = *n as f64;
                LeafValue::Distribution(counts.iter().map(|&c| c as f64 / n).collect())
            }
            NodeSummary::Values { sum, n, .. } => LeafValue::Mean(sum / *n as f64),
        }
    }

    pub(crate) fn tally(&self) -> Tally {
        match self {
            NodeSummary::Classes { counts, n } => {
                let sq: u64 = counts.iter().map(|c| c * c).sum();
                Tally::Classes {
                    left: vec![0; counts.len()],
                    right: counts.clone(),
                    sq_parent: sq,
                    sq_left: 0,
                    sq_right: sq,
                    n: *n,
                    n_left: 0,
                }
            }
            NodeSummary::Values { sum, n, .. } => Tally::Values {
                total: *sum,
                sum_left: 0.0,
                n: *n,
                n_left: 0,
            },
        }
    }
}

/// Running left/right statistics for a sweep over sorted samples.
#[derive(Debug, Clone)]
pub(crate) enum Tally {
    Classes {
        left: Vec<u64>,
        right: Vec<u64>,
        sq_parent: u64,
        sq_left: u64,
        sq_right: u64,
        n: u64,
        n_left: u64,
    },
    Values {
        total: f64,
        sum_left: f64,
        n: u64,
        n_left: u64,
    },
}

impl Tally {
    /// Moves sample `row` from the right side to the left side.
    #[inline]
    pub(crate) fn move_left(&mut self, labels: Labels, row: usize) {
        match (self, labels) {
            (
                Tally::Classes {
                    left,
                    right,
                    sq_left,
                    sq_right,
                    n_left,
                    ..
                },
                Labels::Classes { ids, .. },
            ) => {
                let c = ids[row];
                *sq_left += 2 * left[c] + 1;
                left[c] += 1;
                *sq_right -= 2 * right[c] - 1;
                right[c] -= 1;
                *n_left += 1;
            }
            (Tally::Values { sum_left, n_left, .. }, Labels::Values(v)) => {
                *sum_left += v[row];
                *n_left += 1;
            }
            _ => unreachable!("tally and labels come from the same task"),
        }
    }

    #[inline]
    pub(crate) fn gain(&self) -> f64 {
        match self {
            Tally::Classes {
                sq_parent,
                sq_left,
                sq_right,
                n,
                n_left,
                ..
            } => gini_gain(*n, *n_left, *sq_parent, *sq_left, *sq_right),
            Tally::Values {
                total,
                sum_left,
                n,
                n_left,
            } => variance_gain(*total, *n, *sum_left, *n_left),
        }
    }
}

fn class_sum_sq(ids: &[usize], n_classes: usize) -> u64 {
    let mut counts = vec![0u64; n_classes];
    for &c in ids {
        counts[c] += 1;
    }
    counts.iter().map(|c| c * c).sum()
}

/// Gini impurity for class labels, population variance for real targets.
pub fn impurity(labels: Labels) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    match labels {
        Labels::Classes { ids, n_classes } => Ok(gini(class_sum_sq(ids, n_classes), ids.len() as u64)),
        Labels::Values(v) => {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            Ok(v.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n)
        }
    }
}

/// `H(y) - |y_l|/|y| H(y_l) - |y_r|/|y| H(y_r)`.
pub fn information_gain(parent: Labels, left: Labels, right: Labels) -> Result<f64> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if left.len() + right.len() != parent.len() {
        return Err(Error::LengthMismatch {
            what: "left + right labels",
            expected: parent.len(),
            found: left.len() + right.len(),
        });
    }
    match (parent, left, right) {
        (
            Labels::Classes { ids: p, n_classes },
            Labels::Classes { ids: l, .. },
            Labels::Classes { ids: r, .. },
        ) => {
            let k = n_classes
                .max(left.n_classes())
                .max(right.n_classes());
            Ok(gini_gain(
                p.len() as u64,
                l.len() as u64,
                class_sum_sq(p, k),
                class_sum_sq(l, k),
                class_sum_sq(r, k),
            ))
        }
        (Labels::Values(p), Labels::Values(l), Labels::Values(_)) => Ok(variance_gain(
            p.iter().sum(),
            p.len() as u64,
            l.iter().sum(),
            l.len() as u64,
        )),
        _ => Err(Error::TaskMismatch("mixed class and real labels".into())),
    }
}
