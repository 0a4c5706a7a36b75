//! Random forests of hyperbolic trees.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{argmax, Labels, LeafValue, Node, Predictions, Task, TreeParams};
use crate::error::{Error, Result};
use crate::wrapper::{fit_klein_rows, preprocess, HyperbolicModelSpec, HyperbolicTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Most frequent per-tree class, ties to the lower class id.
    MajorityVote,
    /// Argmax of the mean leaf distribution.
    ProbabilityMean,
    RegressionMean,
}

impl Aggregation {
    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Classification => Aggregation::MajorityVote,
            Task::Regression => Aggregation::RegressionMean,
        }
    }

    fn supports(self, task: Task) -> bool {
        matches!(
            (self, task),
            (Aggregation::MajorityVote | Aggregation::ProbabilityMean, Task::Classification)
                | (Aggregation::RegressionMean, Task::Regression)
        )
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::MajorityVote => "majority-vote",
            Aggregation::ProbabilityMean => "probability-mean",
            Aggregation::RegressionMean => "regression-mean",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority-vote" => Ok(Aggregation::MajorityVote),
            "probability-mean" => Ok(Aggregation::ProbabilityMean),
            "regression-mean" => Ok(Aggregation::RegressionMean),
            other => Err(Error::InvalidParameter(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features drawn per node. `None` picks `floor(sqrt(d))` for
    /// classification and `d` for regression; a single tree always sees
    /// every feature.
    pub feature_subsample: Option<usize>,
    pub depth_limit: usize,
    pub min_samples_split: usize,
    pub seed: u64,
    /// `None` picks the task default.
    pub aggregation: Option<Aggregation>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            bootstrap: true,
            feature_subsample: None,
            depth_limit: 3,
            min_samples_split: 2,
            seed: 0,
            aggregation: None,
        }
    }
}

impl ForestParams {
    fn resolved_subsample(&self, task: Task, d: usize) -> usize {
        match self.feature_subsample {
            Some(m) => m,
            None if self.n_trees == 1 => d,
            None => match task {
                Task::Classification => ((d as f64).sqrt().floor() as usize).max(1),
                Task::Regression => d,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    spec: HyperbolicModelSpec,
    aggregation: Aggregation,
    seed: u64,
    trees: Vec<HyperbolicTree>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of tree `index`, independent of fitting order.
pub fn tree_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

/// Rows tree `index` is fitted on, and the seed for its per-node feature draws.
pub fn tree_sample(master: u64, index: usize, n: usize, bootstrap: bool) -> (Vec<usize>, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(master, index));
    let rows = if bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    (rows, rng.next_u64())
}

pub fn fit_forest(
    x_raw: ArrayView2<f64>,
    labels: Labels,
    spec: &HyperbolicModelSpec,
    params: &ForestParams,
) -> Result<Forest> {
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
    }
    let aggregation = params.aggregation.unwrap_or(Aggregation::default_for(spec.task));
    if !aggregation.supports(spec.task) {
        return Err(Error::InvalidParameter(format!(
            "{aggregation} does not apply to {}",
            spec.task
        )));
    }
    if labels.task() != spec.task {
        return Err(Error::TaskMismatch(format!(
            "model is {} but labels are {}",
            spec.task,
            labels.task()
        )));
    }
    let xk = preprocess(x_raw, spec)?;
    let n = xk.nrows();
    if n == 0 {
        return Err(Error::EmptyLabels);
    }
    let m = params.resolved_subsample(spec.task, xk.ncols());
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let (rows, seed) = tree_sample(params.seed, i, n, params.bootstrap);
            let tree_params = TreeParams {
                depth_limit: params.depth_limit,
                min_samples_split: params.min_samples_split,
                feature_subsample: Some(m),
                seed,
            };
            fit_klein_rows(xk.view(), labels, rows, spec, &tree_params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        spec: *spec,
        aggregation,
        seed: params.seed,
        trees,
    })
}

impl Forest {
    /// Reassembles a forest, for example after reading one from disk.
    pub fn from_parts(
        spec: HyperbolicModelSpec,
        aggregation: Aggregation,
        seed: u64,
        trees: Vec<HyperbolicTree>,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidParameter("a forest needs at least one tree".into()));
        }
        if !aggregation.supports(spec.task) {
            return Err(Error::InvalidParameter(format!("{aggregation} does not apply to {}", spec.task)));
        }
        let first = trees[0].tree();
        for t in &trees {
            if t.spec() != &spec || t.n_features() != first.n_features() || t.tree().n_classes() != first.n_classes() {
                return Err(Error::InvalidParameter("trees do not share one model spec".into()));
            }
        }
        Ok(Forest {
            spec,
            aggregation,
            seed,
            trees,
        })
    }

    pub fn spec(&self) -> &HyperbolicModelSpec {
        &self.spec
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trees(&self) -> &[HyperbolicTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.trees[0].n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.trees[0].tree().n_classes()
    }

    fn leaf_values<'a>(&'a self, xk: &ArrayView2<f64>) -> Result<Vec<Vec<&'a LeafValue>>> {
        self.trees
            .iter()
            .map(|t| {
                let nodes = t.tree().nodes();
                Ok(t.tree()
                    .apply(xk.view())?
                    .into_iter()
                    .map(|l| match &nodes[l] {
                        Node::Leaf { prediction, .. } => prediction,
                        Node::Internal { .. } => unreachable!("apply returns leaves"),
                    })
                    .collect())
            })
            .collect()
    }

    pub fn predict(&self, x_raw: ArrayView2<f64>) -> Result<Predictions> {
        let xk = preprocess(x_raw, &self.spec)?;
        let per_tree = self.leaf_values(&xk.view())?;
        let n = xk.nrows();
        let k = self.n_classes();
        Ok(match self.aggregation {
            Aggregation::MajorityVote => {
                let mut out = Vec::with_capacity(n);
                let mut votes = vec![0usize; k];
                for r in 0..n {
                    votes.iter_mut().for_each(|v| *v = 0);
                    for t in &per_tree {
                        votes[t[r].class()] += 1;
                    }
                    let mut best = 0;
                    for c in 1..k {
                        if votes[c] > votes[best] {
                            best = c;
                        }
                    }
                    out.push(best);
                }
                Predictions::Classes(out)
            }
            Aggregation::ProbabilityMean => {
                let proba = self.mean_distribution(&per_tree, n, k);
                Predictions::Classes(proba.rows().into_iter().map(|r| argmax(r.as_slice().unwrap())).collect())
            }
            Aggregation::RegressionMean => {
                let m = per_tree.len() as f64;
                Predictions::Values(
                    (0..n)
                        .map(|r| per_tree.iter().map(|t| t[r].value()).sum::<f64>() / m)
                        .collect(),
                )
            }
        })
    }

    fn mean_distribution(&self, per_tree: &[Vec<&LeafValue>], n: usize, k: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, k));
        for t in per_tree {
            for (r, leaf) in t.iter().enumerate() {
                if let LeafValue::Distribution(p) = leaf {
                    for (c, v) in p.iter().enumerate() {
                        out[[r, c]] += v;
                    }
                }
            }
        }
        out / per_tree.len() as f64
    }

    /// Mean leaf class distribution over trees.
    pub fn predict_proba(&self, x_raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.spec.task != Task::Classification {
            return Err(Error::TaskMismatch("probabilities need a classification forest".into()));
        }
        let xk = preprocess(x_raw, &self.spec)?;
        let per_tree = self.leaf_values(&xk.view())?;
        Ok(self.mean_distribution(&per_tree, xk.nrows(), self.n_classes()))
    }
}

pub fn predict_forest(forest: &Forest, x_raw: ArrayView2<f64>) -> Result<Predictions> {
    forest.predict(x_raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::DecisionTree;
    use crate::geometry::Curvature;
    use crate::wrapper::{fit, InputGeometry};
    use ndarray::array;

    fn spec(task: Task) -> HyperbolicModelSpec {
        HyperbolicModelSpec::new(Curvature::new(-1.0).unwrap(), InputGeometry::Klein, task)
    }

    fn stump(threshold: f64, low: Vec<f64>, high: Vec<f64>) -> HyperbolicTree {
        let k = low.len();
        let nodes = vec![
            Node::Internal {
                feature: 0,
                threshold,
                left: 1,
                right: 2,
                sample_count: 2,
            },
            Node::Leaf {
                prediction: LeafValue::Distribution(low),
                sample_count: 1,
            },
            Node::Leaf {
                prediction: LeafValue::Distribution(high),
                sample_count: 1,
            },
        ];
        let tree = DecisionTree::from_nodes(Task::Classification, 1, k, 3, nodes).unwrap();
        HyperbolicTree::from_parts(spec(Task::Classification), tree).unwrap()
    }

    #[test]
    fn two_tree_tie_goes_to_class_zero() {
        let a = stump(0.0, vec![1.0, 0.0], vec![1.0, 0.0]);
        let b = stump(0.0, vec![0.0, 1.0], vec![0.0, 1.0]);
        let forest = Forest::from_parts(spec(Task::Classification), Aggregation::MajorityVote, 0, vec![b, a]).unwrap();
        assert_eq!(
            forest.predict(array![[-0.5], [0.5]].view()).unwrap(),
            Predictions::Classes(vec![0, 0])
        );
    }

    #[test]
    fn identical_trees_reproduce_the_tree() {
        let t = stump(0.1, vec![0.8, 0.2], vec![0.3, 0.7]);
        let x = array![[-0.5], [0.5], [0.1]];
        let single = t.predict_simple(x.view()).unwrap();
        for agg in [Aggregation::MajorityVote, Aggregation::ProbabilityMean] {
            let forest = Forest::from_parts(spec(Task::Classification), agg, 0, vec![t.clone(), t.clone(), t.clone()]).unwrap();
            assert_eq!(forest.predict(x.view()).unwrap(), single);
        }
    }

    #[test]
    fn single_tree_without_bootstrap_equals_wrapper_fit() {
        let x = array![[0.1, -0.2], [0.3, 0.4], [-0.5, 0.1], [0.2, 0.2], [-0.1, -0.6]];
        let y = [0, 1, 0, 1, 0];
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..ForestParams::default()
        };
        let forest = fit_forest(x.view(), Labels::classes(&y), &spec(Task::Classification), &params).unwrap();
        let tree = fit(x.view(), Labels::classes(&y), &spec(Task::Classification), &TreeParams::default()).unwrap();
        assert_eq!(forest.trees()[0].tree().nodes(), tree.tree().nodes());
    }

    #[test]
    fn tree_seeds_differ_and_bootstrap_is_in_range() {
        assert_ne!(tree_seed(7, 0), tree_seed(7, 1));
        assert_ne!(tree_seed(7, 0), tree_seed(8, 0));
        let (rows, _) = tree_sample(3, 4, 50, true);
        assert_eq!(rows.len(), 50);
        assert!(rows.iter().all(|&r| r < 50));
        assert_eq!(tree_sample(3, 4, 50, false).0, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_mismatched_aggregation() {
        let x = array![[0.1], [0.2]];
        let params = ForestParams {
            aggregation: Some(Aggregation::RegressionMean),
            ..ForestParams::default()
        };
        assert!(fit_forest(x.view(), Labels::classes(&[0, 1]), &spec(Task::Classification), &params).is_err());
    }
}
