//! Angle-based HyperDT, used as an equivalence oracle and timing baseline.
//!
//! Splits are hyperplanes through the hyperboloid origin with normal
//! `(-cos t, 0, .., sin t, .., 0)` on one spacelike axis. Candidate angles
//! are the hyperbolic angular midpoints of consecutive point angles, which
//! are recomputed at every node.

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cart::{FitStats, Labels, LeafValue, NodeSummary, Predictions, Task, TreeParams};
use crate::error::{Error, Result};
use crate::geometry::{angular_midpoint, Curvature, LorentzPoint, SplitAngle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AngularNode {
    Internal {
        /// Spacelike axis in `1..=d`.
        feature: usize,
        theta: SplitAngle,
        left: usize,
        right: usize,
        sample_count: usize,
    },
    Leaf {
        prediction: LeafValue,
        sample_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTree {
    task: Task,
    curvature: Curvature,
    n_features: usize,
    n_classes: usize,
    depth_limit: usize,
    nodes: Vec<AngularNode>,
}

/// Degenerate angles are not offered as split candidates.
const MIN_SIN: f64 = 1e-12;

#[inline]
fn side_of(x0: f64, xi: f64, theta: SplitAngle) -> Side {
    let t = theta.value();
    if xi * t.sin() - x0 * t.cos() > 0.0 {
        Side::Right
    } else {
        Side::Left
    }
}

/// `Right` iff `x_i sin(t) - x_0 cos(t) > 0`; points on the plane go left.
pub fn angular_split_sign(x: &LorentzPoint, axis: usize, theta: SplitAngle) -> Result<Side> {
    if axis == 0 || axis > x.dim() {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} is not a spacelike axis of a {}-dimensional point",
            x.dim()
        )));
    }
    Ok(side_of(x.time(), x.coords()[axis], theta))
}

/// `arccot(x_i / x_0)` kept strictly inside `(0, pi)`.
#[inline]
fn point_angle(x0: f64, xi: f64) -> f64 {
    f64::atan2(x0, xi).clamp(f64::MIN_POSITIVE, std::f64::consts::PI.next_down())
}

pub fn fit_reference(
    x: ArrayView2<f64>,
    labels: Labels,
    k: Curvature,
    params: &TreeParams,
) -> Result<ReferenceTree> {
    let rows = (0..x.nrows()).collect();
    fit_reference_instrumented(x, labels, k, rows, params).map(|(t, _)| t)
}

/// Fits on the given rows (with multiplicity) and reports the number of
/// candidate evaluations.
pub fn fit_reference_instrumented(
    x: ArrayView2<f64>,
    labels: Labels,
    k: Curvature,
    rows: Vec<usize>,
    params: &TreeParams,
) -> Result<(ReferenceTree, FitStats)> {
    if labels.len() != x.nrows() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if x.ncols() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: x.ncols(),
        });
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= x.nrows()) {
        return Err(Error::InvalidParameter(format!("row index {bad} out of range")));
    }
    for (i, row) in x.rows().into_iter().enumerate() {
        let coords: Vec<f64> = row.iter().copied().collect();
        LorentzPoint::validate(&coords, k).map_err(|source| Error::InvalidRow { row: i, source })?;
    }
    if let Labels::Values(v) = labels {
        if let Some(row) = v.iter().position(|y| !y.is_finite()) {
            return Err(Error::NonFinite { row, col: x.ncols() });
        }
    }
    let d = x.ncols() - 1;
    if let Some(m) = params.feature_subsample {
        if m == 0 || m > d {
            return Err(Error::InvalidParameter(format!("feature_subsample {m} not in 1..={d}")));
        }
    }
    let mut fitter = Fitter {
        x,
        labels,
        params,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        nodes: Vec::new(),
        evaluations: 0,
    };
    fitter.build(rows, 0);
    let stats = FitStats {
        candidates_evaluated: fitter.evaluations,
        nodes: fitter.nodes.len(),
    };
    Ok((
        ReferenceTree {
            task: labels.task(),
            curvature: k,
            n_features: d,
            n_classes: labels.n_classes(),
            depth_limit: params.depth_limit,
            nodes: fitter.nodes,
        },
        stats,
    ))
}

struct Fitter<'a> {
    x: ArrayView2<'a, f64>,
    labels: Labels<'a>,
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<AngularNode>,
    evaluations: u64,
}

impl Fitter<'_> {
    fn features(&mut self) -> Vec<usize> {
        let d = self.x.ncols() - 1;
        match self.params.feature_subsample {
            Some(m) if m < d => {
                let mut f = rand::seq::index::sample(&mut self.rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    /// Best angle for spacelike axis `axis` over `rows`, as `(theta, gain)`.
    fn scan_axis(&mut self, axis: usize, rows: &[usize], summary: &NodeSummary) -> Option<(SplitAngle, f64)> {
        let mut pts: Vec<(f64, usize)> = rows
            .iter()
            .map(|&r| (point_angle(self.x[[r, 0]], self.x[[r, axis]]), r))
            .collect();
        // Descending angle is ascending Klein coordinate.
        pts.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut tally = summary.tally();
        let mut best: Option<(SplitAngle, f64)> = None;
        let mut best_gain = 0.0;
        for i in 0..pts.len().saturating_sub(1) {
            tally.move_left(self.labels, pts[i].1);
            if pts[i].0 > pts[i + 1].0 {
                let a = SplitAngle::new(pts[i].0).ok()?;
                let b = SplitAngle::new(pts[i + 1].0).ok()?;
                let m = angular_midpoint(a, b);
                if m.value().sin().abs() < MIN_SIN {
                    continue;
                }
                self.evaluations += 1;
                let g = tally.gain();
                if g > best_gain {
                    best_gain = g;
                    best = Some((m, g));
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let idx = self.nodes.len();
        let n = rows.len();
        let summary = NodeSummary::from_rows(self.labels, &rows);
        self.nodes.push(AngularNode::Leaf {
            prediction: summary.leaf_value(),
            sample_count: n,
        });
        if depth >= self.params.depth_limit || n < self.params.min_samples_split.max(2) || summary.is_pure() {
            return idx;
        }
        let mut best: Option<(usize, SplitAngle, f64)> = None;
        for f in self.features() {
            if let Some((theta, gain)) = self.scan_axis(f + 1, &rows, &summary) {
                if best.is_none_or(|b| gain > b.2) {
                    best = Some((f + 1, theta, gain));
                }
            }
        }
        let Some((axis, theta, _)) = best else {
            return idx;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| side_of(self.x[[r, 0]], self.x[[r, axis]], theta) == Side::Left);
        if l.is_empty() || r.is_empty() {
            return idx;
        }
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[idx] = AngularNode::Internal {
            feature: axis,
            theta,
            left,
            right,
            sample_count: n,
        };
        idx
    }
}

impl ReferenceTree {
    pub fn task(&self) -> Task {
        self.task
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
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

    pub fn nodes(&self) -> &[AngularNode] {
        &self.nodes
    }

    /// Assembles a tree from a node arena, checking its shape.
    pub fn from_nodes(
        task: Task,
        curvature: Curvature,
        n_features: usize,
        n_classes: usize,
        depth_limit: usize,
        nodes: Vec<AngularNode>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::MalformedTree("tree has no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        referenced[0] = true;
        for (i, node) in nodes.iter().enumerate() {
            match node {
                AngularNode::Internal {
                    feature, left, right, ..
                } => {
                    if *feature == 0 || *feature > n_features {
                        return Err(Error::MalformedTree(format!("node {i}: axis {feature} out of range")));
                    }
                    for &c in [left, right] {
                        if c <= i || c >= nodes.len() || referenced[c] {
                            return Err(Error::MalformedTree(format!("node {i}: bad child {c}")));
                        }
                        referenced[c] = true;
                    }
                }
                AngularNode::Leaf { prediction, .. } => match (task, prediction) {
                    (Task::Classification, LeafValue::Distribution(p)) if p.len() == n_classes => {}
                    (Task::Regression, LeafValue::Mean(_)) => {}
                    _ => return Err(Error::MalformedTree(format!("node {i}: leaf does not match task"))),
                },
            }
        }
        if referenced.iter().any(|r| !r) {
            return Err(Error::MalformedTree("unreachable node".into()));
        }
        Ok(ReferenceTree {
            task,
            curvature,
            n_features,
            n_classes,
            depth_limit,
            nodes,
        })
    }

    fn leaf_of(&self, x0: f64, row: impl Fn(usize) -> f64) -> &LeafValue {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                AngularNode::Leaf { prediction, .. } => return prediction,
                AngularNode::Internal {
                    feature,
                    theta,
                    left,
                    right,
                    ..
                } => {
                    i = match side_of(x0, row(*feature), *theta) {
                        Side::Left => *left,
                        Side::Right => *right,
                    }
                }
            }
        }
    }

    /// Routes hyperboloid rows by the angular sign test.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Predictions> {
        if x.ncols() != self.n_features + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.n_features + 1,
                found: x.ncols(),
            });
        }
        let leaves = x.rows().into_iter().map(|r| self.leaf_of(r[0], |j| r[j]));
        Ok(match self.task {
            Task::Classification => Predictions::Classes(leaves.map(LeafValue::class).collect()),
            Task::Regression => Predictions::Values(leaves.map(LeafValue::value).collect()),
        })
    }
}

pub fn predict_reference(tree: &ReferenceTree, x: ArrayView2<f64>) -> Result<Predictions> {
    tree.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{klein_to_lorentz, KleinPoint};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use std::f64::consts::FRAC_PI_2;

    fn k1() -> Curvature {
        Curvature::new(-1.0).unwrap()
    }

    fn lift(klein: &[f64], k: Curvature) -> Array2<f64> {
        let mut out = Array2::zeros((klein.len(), 2));
        for (i, &v) in klein.iter().enumerate() {
            let u = klein_to_lorentz(&KleinPoint::new(vec![v]).unwrap(), k);
            out[[i, 0]] = u.coords()[0];
            out[[i, 1]] = u.coords()[1];
        }
        out
    }

    #[test]
    fn sign_at_right_angle_follows_coordinate() {
        let theta = SplitAngle::new(FRAC_PI_2).unwrap();
        let pos = LorentzPoint::from_spatial(&[0.3, 0.0], k1()).unwrap();
        let neg = LorentzPoint::from_spatial(&[-0.3, 0.0], k1()).unwrap();
        let on = LorentzPoint::origin(2, k1());
        assert_eq!(angular_split_sign(&pos, 1, theta).unwrap(), Side::Right);
        assert_eq!(angular_split_sign(&neg, 1, theta).unwrap(), Side::Left);
        assert_eq!(angular_split_sign(&on, 1, theta).unwrap(), Side::Left);
        assert!(angular_split_sign(&on, 0, theta).is_err());
        assert!(angular_split_sign(&on, 3, theta).is_err());
    }

    #[test]
    fn lifted_separable_example() {
        let k = k1();
        let x = lift(&[0.1, 0.2, 0.3, 0.4], k);
        let tree = fit_reference(x.view(), Labels::classes(&[0, 0, 1, 1]), k, &TreeParams::default()).unwrap();
        match &tree.nodes()[0] {
            AngularNode::Internal { feature, theta, .. } => {
                assert_eq!(*feature, 1);
                let expected = crate::geometry::scalar_einstein_midpoint(0.2, 0.3, k).unwrap();
                assert_abs_diff_eq!(theta.cot(), expected, epsilon = 1e-12);
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(
            tree.predict(x.view()).unwrap(),
            Predictions::Classes(vec![0, 0, 1, 1])
        );
    }

    #[test]
    fn depth_zero_is_majority_leaf() {
        let k = k1();
        let x = lift(&[0.1, 0.2, 0.3], k);
        let params = TreeParams {
            depth_limit: 0,
            ..TreeParams::default()
        };
        let tree = fit_reference(x.view(), Labels::classes(&[1, 1, 0]), k, &params).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.predict(x.view()).unwrap(), Predictions::Classes(vec![1, 1, 1]));
    }

    #[test]
    fn rejects_off_manifold_rows_and_wrong_width() {
        let k = k1();
        let mut x = lift(&[0.1, 0.2], k);
        x[[1, 0]] = 3.0;
        assert!(matches!(
            fit_reference(x.view(), Labels::classes(&[0, 1]), k, &TreeParams::default()),
            Err(Error::InvalidRow { row: 1, .. })
        ));
        let x = lift(&[0.1, 0.2], k);
        let tree = fit_reference(x.view(), Labels::classes(&[0, 1]), k, &TreeParams::default()).unwrap();
        assert!(tree.predict(Array2::zeros((1, 3)).view()).is_err());
    }
}
