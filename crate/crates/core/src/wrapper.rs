//! Hyperbolic decision trees: Klein preprocessing, Euclidean CART, and
//! Einstein-midpoint threshold postprocessing.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cart::{self, DecisionTree, Labels, Node, Predictions, Task, TreeParams};
use crate::error::{Error, Result};
use crate::geometry::{
    poincare_to_klein, scalar_einstein_midpoint, Curvature, KleinPoint, LorentzPoint,
    PoincarePoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputGeometry {
    Hyperboloid,
    Klein,
    Poincare,
}

impl std::fmt::Display for InputGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputGeometry::Hyperboloid => "hyperboloid",
            InputGeometry::Klein => "klein",
            InputGeometry::Poincare => "poincare",
        })
    }
}

impl std::str::FromStr for InputGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperboloid" => Ok(InputGeometry::Hyperboloid),
            "klein" => Ok(InputGeometry::Klein),
            "poincare" => Ok(InputGeometry::Poincare),
            other => Err(Error::InvalidParameter(format!("unknown geometry '{other}'"))),
        }
    }
}

impl InputGeometry {
    /// Number of input columns for intrinsic dimension `d`.
    pub fn columns(self, d: usize) -> usize {
        match self {
            InputGeometry::Hyperboloid => d + 1,
            InputGeometry::Klein | InputGeometry::Poincare => d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicModelSpec {
    #[serde(rename = "K")]
    pub curvature: Curvature,
    pub input_geometry: InputGeometry,
    pub task: Task,
}

impl HyperbolicModelSpec {
    pub fn new(curvature: Curvature, input_geometry: InputGeometry, task: Task) -> Self {
        HyperbolicModelSpec {
            curvature,
            input_geometry,
            task,
        }
    }
}

/// Something [`adjust_thresholds`] could not do exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PostprocessWarning {
    /// The tree carried no training indices, so every row of the data was used.
    ApproximatePostprocessing,
    /// No active row fell on one side of this node; its threshold was kept.
    EmptySide { node: usize },
}

impl std::fmt::Display for PostprocessWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PostprocessWarning::ApproximatePostprocessing => {
                f.write_str("approximate postprocessing: no training indices, using all rows")
            }
            PostprocessWarning::EmptySide { node } => {
                write!(f, "node {node}: one side has no rows, threshold left unchanged")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicTree {
    spec: HyperbolicModelSpec,
    tree: DecisionTree,
    postprocessed: bool,
}

fn row_error(row: usize) -> impl Fn(crate::geometry::GeometryError) -> Error {
    move |source| Error::InvalidRow { row, source }
}

fn row_slice<'a>(r: &'a ArrayView1<f64>, buf: &'a mut Vec<f64>) -> &'a [f64] {
    match r.as_slice() {
        Some(s) => s,
        None => {
            buf.clear();
            buf.extend(r.iter().copied());
            buf
        }
    }
}

fn row_vec(r: ArrayView1<f64>) -> Vec<f64> {
    r.iter().copied().collect()
}

/// Maps raw input rows to Klein coordinates, validating each row.
pub fn preprocess(x_raw: ArrayView2<f64>, spec: &HyperbolicModelSpec) -> Result<Array2<f64>> {
    let k = spec.curvature;
    let n = x_raw.nrows();
    match spec.input_geometry {
        InputGeometry::Hyperboloid => {
            if x_raw.ncols() < 2 {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    found: x_raw.ncols(),
                });
            }
            let d = x_raw.ncols() - 1;
            let mut out = Array2::zeros((n, d));
            let mut buf = Vec::new();
            for (i, row) in x_raw.rows().into_iter().enumerate() {
                let coords = row_slice(&row, &mut buf);
                LorentzPoint::validate(coords, k).map_err(row_error(i))?;
                for j in 0..d {
                    out[[i, j]] = coords[j + 1] / coords[0];
                }
            }
            Ok(out)
        }
        InputGeometry::Klein => {
            let mut buf = Vec::new();
            for (i, row) in x_raw.rows().into_iter().enumerate() {
                KleinPoint::validate(row_slice(&row, &mut buf)).map_err(row_error(i))?;
            }
            Ok(x_raw.to_owned())
        }
        InputGeometry::Poincare => {
            let mut out = Array2::zeros(x_raw.raw_dim());
            for (i, row) in x_raw.rows().into_iter().enumerate() {
                let p = PoincarePoint::new(row_vec(row), k).map_err(row_error(i))?;
                for (j, v) in poincare_to_klein(&p, k).coords().iter().enumerate() {
                    out[[i, j]] = *v;
                }
            }
            Ok(out)
        }
    }
}

/// Moves every threshold to the Einstein midpoint of the closest active
/// training values on either side. Training rows keep their leaves.
pub fn adjust_thresholds(
    mut tree: DecisionTree,
    x_klein: ArrayView2<f64>,
    k: Curvature,
) -> Result<(DecisionTree, Vec<PostprocessWarning>)> {
    if x_klein.ncols() != tree.n_features() {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features(),
            found: x_klein.ncols(),
        });
    }
    let mut warnings = Vec::new();
    let rows: Vec<usize> = match tree.training_indices() {
        Some(rows) => {
            if let Some(&bad) = rows.iter().find(|&&r| r >= x_klein.nrows()) {
                return Err(Error::InvalidParameter(format!(
                    "training index {bad} out of range for {} rows",
                    x_klein.nrows()
                )));
            }
            rows.to_vec()
        }
        None => {
            log::warn!("{}", PostprocessWarning::ApproximatePostprocessing);
            warnings.push(PostprocessWarning::ApproximatePostprocessing);
            (0..x_klein.nrows()).collect()
        }
    };
    let mut rows = rows;
    let mut stack = vec![(0usize, 0usize, rows.len())];
    while let Some((node, start, end)) = stack.pop() {
        let rows = &mut rows[start..end];
        let Node::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } = tree.nodes()[node]
        else {
            continue;
        };
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut seen_left = false;
        let mut seen_right = false;
        for &r in rows.iter() {
            let v = x_klein[[r, feature]];
            if v <= threshold {
                seen_left = true;
                lo = lo.max(v);
            } else {
                seen_right = true;
                hi = hi.min(v);
            }
        }
        if seen_left && seen_right {
            move_to_midpoint(&mut tree, node, lo, hi, k)?;
        } else {
            log::warn!("{}", PostprocessWarning::EmptySide { node });
            warnings.push(PostprocessWarning::EmptySide { node });
        }
        let mut mid = 0;
        for i in 0..rows.len() {
            if x_klein[[rows[i], feature]] <= threshold {
                rows.swap(mid, i);
                mid += 1;
            }
        }
        stack.push((right, start + mid, end));
        stack.push((left, start, start + mid));
    }
    Ok((tree, warnings))
}

/// Sets the threshold of `node` to the Einstein midpoint of its gap `[lo, hi)`,
/// or to `lo` when rounding puts the midpoint outside the gap.
fn move_to_midpoint(tree: &mut DecisionTree, node: usize, lo: f64, hi: f64, k: Curvature) -> Result<()> {
    let mut m = scalar_einstein_midpoint(lo, hi, k)?;
    if !(m >= lo && m < hi) {
        m = lo;
    }
    tree.set_threshold(node, m)
}

fn check_task(spec: &HyperbolicModelSpec, labels: Labels) -> Result<()> {
    if labels.task() != spec.task {
        return Err(Error::TaskMismatch(format!(
            "model is {} but labels are {}",
            spec.task,
            labels.task()
        )));
    }
    Ok(())
}

/// Fits a tree on the given Klein rows and postprocesses it on exactly those rows.
pub(crate) fn fit_klein_rows(
    x_klein: ArrayView2<f64>,
    labels: Labels,
    rows: Vec<usize>,
    spec: &HyperbolicModelSpec,
    params: &TreeParams,
) -> Result<HyperbolicTree> {
    check_task(spec, labels)?;
    let (mut tree, gaps) = cart::fit_tree_with_gaps(x_klein, labels, rows, params)?;
    for (node, lo, hi) in gaps {
        move_to_midpoint(&mut tree, node, lo, hi, spec.curvature)?;
    }
    Ok(HyperbolicTree {
        spec: *spec,
        tree,
        postprocessed: true,
    })
}

/// Preprocess, fit with CART, then postprocess thresholds.
pub fn fit(
    x_raw: ArrayView2<f64>,
    labels: Labels,
    spec: &HyperbolicModelSpec,
    params: &TreeParams,
) -> Result<HyperbolicTree> {
    check_task(spec, labels)?;
    let xk = preprocess(x_raw, spec)?;
    let rows = (0..xk.nrows()).collect();
    fit_klein_rows(xk.view(), labels, rows, spec, params)
}

impl HyperbolicTree {
    /// Wraps an already postprocessed tree, such as one read from disk.
    pub fn from_parts(spec: HyperbolicModelSpec, tree: DecisionTree) -> Result<Self> {
        if tree.task() != spec.task {
            return Err(Error::TaskMismatch(format!(
                "spec is {} but tree is {}",
                spec.task,
                tree.task()
            )));
        }
        for (i, node) in tree.nodes().iter().enumerate() {
            if let Node::Internal { threshold, .. } = node {
                if threshold * threshold >= 1.0 {
                    return Err(Error::MalformedTree(format!(
                        "node {i}: threshold {threshold} outside the Klein ball"
                    )));
                }
            }
        }
        Ok(HyperbolicTree {
            spec,
            tree,
            postprocessed: true,
        })
    }

    pub fn spec(&self) -> &HyperbolicModelSpec {
        &self.spec
    }

    pub fn tree(&self) -> &DecisionTree {
        &self.tree
    }

    pub fn postprocessed(&self) -> bool {
        self.postprocessed
    }

    pub fn n_features(&self) -> usize {
        self.tree.n_features()
    }

    /// Preprocesses all of `x_raw`, then routes each row through the tree.
    pub fn predict_simple(&self, x_raw: ArrayView2<f64>) -> Result<Predictions> {
        if x_raw.nrows() == 0 {
            return Ok(self.empty_predictions());
        }
        let xk = preprocess(x_raw, &self.spec)?;
        self.tree.predict(xk.view())
    }

    pub fn predict_proba(&self, x_raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        let xk = preprocess(x_raw, &self.spec)?;
        self.tree.predict_proba(xk.view())
    }

    /// Leaf index per row.
    pub fn apply(&self, x_raw: ArrayView2<f64>) -> Result<Vec<usize>> {
        let xk = preprocess(x_raw, &self.spec)?;
        self.tree.apply(xk.view())
    }

    /// Walks hyperboloid rows computing only the ratio `x_f / x_0` needed at
    /// each visited node. Other geometries use [`Self::predict_simple`].
    pub fn predict_selective(&self, x_raw: ArrayView2<f64>) -> Result<Predictions> {
        self.predict_selective_counted(x_raw).map(|(p, _)| p)
    }

    /// [`Self::predict_selective`] plus the number of ratios computed per row.
    pub fn predict_selective_counted(&self, x_raw: ArrayView2<f64>) -> Result<(Predictions, Vec<usize>)> {
        if self.spec.input_geometry != InputGeometry::Hyperboloid {
            let p = self.predict_simple(x_raw)?;
            let counts = vec![0; p.len()];
            return Ok((p, counts));
        }
        let expected = self.tree.n_features() + 1;
        if x_raw.ncols() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: x_raw.ncols(),
            });
        }
        let nodes = self.tree.nodes();
        let mut leaves = Vec::with_capacity(x_raw.nrows());
        let mut counts = Vec::with_capacity(x_raw.nrows());
        for (r, row) in x_raw.rows().into_iter().enumerate() {
            let x0 = row[0];
            if !(x0.is_finite() && x0 > 0.0) {
                return Err(Error::InvalidRow {
                    row: r,
                    source: crate::geometry::GeometryError::InvalidPoint(format!(
                        "timelike coordinate must be positive, found {x0}"
                    )),
                });
            }
            let mut i = 0;
            let mut visited = 0;
            while let Node::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } = nodes[i]
            {
                visited += 1;
                i = if row[feature + 1] / x0 <= threshold { left } else { right };
            }
            leaves.push(i);
            counts.push(visited);
        }
        Ok((self.tree.predictions_from_leaves(&leaves), counts))
    }

    fn empty_predictions(&self) -> Predictions {
        match self.spec.task {
            Task::Classification => Predictions::Classes(Vec::new()),
            Task::Regression => Predictions::Values(Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::{fit_tree, LeafValue};
    use crate::geometry::{klein_to_lorentz, klein_to_poincare};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn k1() -> Curvature {
        Curvature::new(-1.0).unwrap()
    }

    fn spec(g: InputGeometry) -> HyperbolicModelSpec {
        HyperbolicModelSpec::new(k1(), g, Task::Classification)
    }

    fn lift(xk: &Array2<f64>, k: Curvature) -> Array2<f64> {
        let mut out = Array2::zeros((xk.nrows(), xk.ncols() + 1));
        for (i, row) in xk.rows().into_iter().enumerate() {
            let u = klein_to_lorentz(&KleinPoint::new(row.to_vec()).unwrap(), k);
            for (j, v) in u.coords().iter().enumerate() {
                out[[i, j]] = *v;
            }
        }
        out
    }

    #[test]
    fn preprocess_paths() {
        let origin = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(
            preprocess(origin.view(), &spec(InputGeometry::Hyperboloid)).unwrap(),
            Array2::<f64>::zeros((2, 2))
        );
        let xk = array![[0.1, -0.3], [0.5, 0.2]];
        assert_eq!(preprocess(xk.view(), &spec(InputGeometry::Klein)).unwrap(), xk);

        let k = Curvature::new(-2.0).unwrap();
        let mut xp = Array2::zeros(xk.raw_dim());
        for (i, row) in xk.rows().into_iter().enumerate() {
            let p = klein_to_poincare(&KleinPoint::new(row.to_vec()).unwrap(), k);
            xp[[i, 0]] = p.coords()[0];
            xp[[i, 1]] = p.coords()[1];
        }
        let sp = HyperbolicModelSpec::new(k, InputGeometry::Poincare, Task::Classification);
        let back = preprocess(xp.view(), &sp).unwrap();
        let sh = HyperbolicModelSpec::new(k, InputGeometry::Hyperboloid, Task::Classification);
        let via_lorentz = preprocess(lift(&xk, k).view(), &sh).unwrap();
        for (a, b) in back.iter().zip(via_lorentz.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn preprocess_names_bad_row() {
        let x = array![[1.0, 0.0], [1.0, 0.5]];
        match preprocess(x.view(), &spec(InputGeometry::Hyperboloid)) {
            Err(Error::InvalidRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
        let x = array![[0.5], [1.0]];
        assert!(matches!(
            preprocess(x.view(), &spec(InputGeometry::Klein)),
            Err(Error::InvalidRow { row: 1, .. })
        ));
    }

    fn one_split_tree(lo: f64, hi: f64) -> (DecisionTree, Array2<f64>) {
        let x = array![[lo], [hi]];
        let tree = fit_tree(x.view(), Labels::classes(&[0, 1]), &TreeParams::default()).unwrap();
        (tree, x)
    }

    fn root_threshold(tree: &DecisionTree) -> f64 {
        match tree.nodes()[0] {
            Node::Internal { threshold, .. } => threshold,
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn symmetric_gap_adjusts_to_zero() {
        let (tree, x) = one_split_tree(-0.4, 0.4);
        let (tree, w) = adjust_thresholds(tree, x.view(), k1()).unwrap();
        assert!(w.is_empty());
        assert_eq!(root_threshold(&tree), 0.0);
    }

    #[test]
    fn asymmetric_gap_shifts_toward_boundary() {
        let (tree, x) = one_split_tree(0.0, 0.5);
        assert_eq!(root_threshold(&tree), 0.25);
        let (tree, _) = adjust_thresholds(tree, x.view(), k1()).unwrap();
        assert_abs_diff_eq!(root_threshold(&tree), 0.267949, epsilon = 1e-6);
    }

    #[test]
    fn foreign_tree_uses_all_rows_with_warning() {
        let (tree, x) = one_split_tree(0.0, 0.5);
        let foreign = DecisionTree::from_nodes(
            tree.task(),
            1,
            2,
            3,
            tree.nodes().to_vec(),
        )
        .unwrap();
        let (adjusted, w) = adjust_thresholds(foreign, x.view(), k1()).unwrap();
        assert_eq!(w, vec![PostprocessWarning::ApproximatePostprocessing]);
        assert_abs_diff_eq!(root_threshold(&adjusted), 0.267949, epsilon = 1e-6);
    }

    #[test]
    fn empty_side_keeps_threshold() {
        let (tree, _) = one_split_tree(0.0, 0.5);
        let foreign = DecisionTree::from_nodes(tree.task(), 1, 2, 3, tree.nodes().to_vec()).unwrap();
        let x = array![[0.6], [0.7]];
        let (adjusted, w) = adjust_thresholds(foreign, x.view(), k1()).unwrap();
        assert!(w.contains(&PostprocessWarning::EmptySide { node: 0 }));
        assert_eq!(root_threshold(&adjusted), 0.25);
    }

    #[test]
    fn depth_zero_is_majority_leaf() {
        let xk = array![[0.1], [0.2], [0.3]];
        let params = TreeParams {
            depth_limit: 0,
            ..TreeParams::default()
        };
        for g in [InputGeometry::Klein, InputGeometry::Hyperboloid] {
            let x = if g == InputGeometry::Klein { xk.clone() } else { lift(&xk, k1()) };
            let model = fit(x.view(), Labels::classes(&[1, 0, 1]), &spec(g), &params).unwrap();
            assert_eq!(model.tree().n_nodes(), 1);
            assert_eq!(
                model.predict_simple(x.view()).unwrap(),
                Predictions::Classes(vec![1, 1, 1])
            );
            let (p, counts) = model.predict_selective_counted(x.view()).unwrap();
            assert_eq!(p, Predictions::Classes(vec![1, 1, 1]));
            assert!(counts.iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let xk = array![[0.1], [0.3]];
        let model = fit(xk.view(), Labels::classes(&[0, 1]), &spec(InputGeometry::Klein), &TreeParams::default()).unwrap();
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(model.predict_simple(empty.view()).unwrap().is_empty());
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let xk = array![[0.1], [0.3]];
        let sr = HyperbolicModelSpec::new(k1(), InputGeometry::Klein, Task::Regression);
        assert!(matches!(
            fit(xk.view(), Labels::classes(&[0, 1]), &sr, &TreeParams::default()),
            Err(Error::TaskMismatch(_))
        ));
    }

    #[test]
    fn from_parts_rejects_thresholds_outside_ball() {
        let nodes = vec![
            Node::Internal {
                feature: 0,
                threshold: 1.5,
                left: 1,
                right: 2,
                sample_count: 2,
            },
            Node::Leaf {
                prediction: LeafValue::Distribution(vec![1.0, 0.0]),
                sample_count: 1,
            },
            Node::Leaf {
                prediction: LeafValue::Distribution(vec![0.0, 1.0]),
                sample_count: 1,
            },
        ];
        let tree = DecisionTree::from_nodes(Task::Classification, 1, 2, 3, nodes).unwrap();
        assert!(HyperbolicTree::from_parts(spec(InputGeometry::Klein), tree).is_err());
    }
}
