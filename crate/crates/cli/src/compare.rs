//! Node-by-node comparison of fast and reference trees on generated data.

use std::io::Write;

use fast_hyperdt::cart::{
    candidate_splits, information_gain, DecisionTree, Labels, Node, Targets, Task, TreeParams,
};
use fast_hyperdt::datagen::{sample_mixture, MixtureConfig};
use fast_hyperdt::geometry::Curvature;
use fast_hyperdt::metrics::agreement;
use fast_hyperdt::reference::{fit_reference, AngularNode, ReferenceTree};
use fast_hyperdt::wrapper::{fit, preprocess, HyperbolicModelSpec, InputGeometry};
use ndarray::{s, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::Result;

/// Largest `|t - cot(theta)|` for an exact node match.
pub const EXACT_TOL: f64 = 1e-9;
/// Largest gain difference for two different splits to count as a tie.
pub const TIE_TOL: f64 = 1e-4;

pub const CSV_HEADER: &str = "seed,nodes,exact,tie_equiv,mismatch,train_agree,test_agree";

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub n_seeds: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub depth: usize,
    pub curvature: Curvature,
    pub train_fraction: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            n_seeds: 100,
            seed: 0,
            n_samples: 1000,
            dim: 2,
            n_classes: 2,
            depth: 3,
            curvature: Curvature::default(),
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Exact,
    TieEquivalent,
    Mismatch,
}

/// A node pair that did not match exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDiff {
    /// Preorder index in the fast tree, or in the reference tree when the
    /// fast tree has a leaf there.
    pub node: usize,
    pub category: Category,
    pub fast_gain: f64,
    pub reference_gain: f64,
    /// Nodes at and below this position that inherit the category.
    pub affected: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeCounts {
    pub exact: usize,
    pub tie_equiv: usize,
    pub mismatch: usize,
    pub diffs: Vec<NodeDiff>,
}

impl NodeCounts {
    pub fn nodes(&self) -> usize {
        self.exact + self.tie_equiv + self.mismatch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub counts: NodeCounts,
    pub train_agree: f64,
    pub test_agree: f64,
    /// Smallest best-minus-runner-up gain over the fast tree's internal nodes.
    pub min_margin: f64,
}

impl SeedReport {
    /// Every split decision had a unique best gain by more than [`TIE_TOL`].
    pub fn certified(&self) -> bool {
        self.min_margin > TIE_TOL
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.counts.nodes(),
            self.counts.exact,
            self.counts.tie_equiv,
            self.counts.mismatch,
            self.train_agree,
            self.test_agree
        )
    }
}

fn subset(labels: Labels, rows: &[usize]) -> Targets {
    match labels {
        Labels::Classes { ids, .. } => Targets::Classes(rows.iter().map(|&r| ids[r]).collect()),
        Labels::Values(v) => Targets::Values(rows.iter().map(|&r| v[r]).collect()),
    }
}

/// Information gain of `x[feature] <= threshold` on `rows`; 0 when a side is empty.
pub fn split_gain(x: ArrayView2<f64>, labels: Labels, rows: &[usize], feature: usize, threshold: f64) -> f64 {
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, feature]] <= threshold);
    if l.is_empty() || r.is_empty() {
        return 0.0;
    }
    let (p, l, r) = (subset(labels, rows), subset(labels, &l), subset(labels, &r));
    information_gain(p.labels(), l.labels(), r.labels()).unwrap_or(0.0)
}

fn fast_internal(tree: &DecisionTree, i: usize) -> usize {
    match tree.nodes()[i] {
        Node::Leaf { .. } => 0,
        Node::Internal { left, right, .. } => 1 + fast_internal(tree, left) + fast_internal(tree, right),
    }
}

fn reference_internal(tree: &ReferenceTree, i: usize) -> usize {
    match tree.nodes()[i] {
        AngularNode::Leaf { .. } => 0,
        AngularNode::Internal { left, right, .. } => {
            1 + reference_internal(tree, left) + reference_internal(tree, right)
        }
    }
}

struct Walker<'a> {
    fast: &'a DecisionTree,
    reference: &'a ReferenceTree,
    xk: ArrayView2<'a, f64>,
    labels: Labels<'a>,
    counts: NodeCounts,
}

impl Walker<'_> {
    fn record(&mut self, node: usize, fast_gain: f64, reference_gain: f64, affected: usize) {
        let category = if (fast_gain - reference_gain).abs() <= TIE_TOL {
            self.counts.tie_equiv += affected;
            Category::TieEquivalent
        } else {
            self.counts.mismatch += affected;
            Category::Mismatch
        };
        self.counts.diffs.push(NodeDiff {
            node,
            category,
            fast_gain,
            reference_gain,
            affected,
        });
    }

    fn walk(&mut self, fi: usize, ri: usize, rows: Vec<usize>) {
        match (&self.fast.nodes()[fi], &self.reference.nodes()[ri]) {
            (Node::Leaf { .. }, AngularNode::Leaf { .. }) => {}
            (
                &Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                },
                &AngularNode::Internal {
                    feature: axis,
                    theta,
                    left: rl,
                    right: rr,
                    ..
                },
            ) => {
                let cot = theta.cot();
                if axis == feature + 1 && (threshold - cot).abs() < EXACT_TOL {
                    self.counts.exact += 1;
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.into_iter().partition(|&i| self.xk[[i, feature]] <= threshold);
                    self.walk(left, rl, l);
                    self.walk(right, rr, r);
                } else {
                    let gf = split_gain(self.xk, self.labels, &rows, feature, threshold);
                    let gr = split_gain(self.xk, self.labels, &rows, axis - 1, cot);
                    let affected = fast_internal(self.fast, fi).max(reference_internal(self.reference, ri));
                    self.record(fi, gf, gr, affected);
                }
            }
            (&Node::Internal { feature, threshold, .. }, AngularNode::Leaf { .. }) => {
                let gf = split_gain(self.xk, self.labels, &rows, feature, threshold);
                let affected = fast_internal(self.fast, fi);
                self.record(fi, gf, 0.0, affected);
            }
            (Node::Leaf { .. }, &AngularNode::Internal { feature: axis, theta, .. }) => {
                let gr = split_gain(self.xk, self.labels, &rows, axis - 1, theta.cot());
                let affected = reference_internal(self.reference, ri);
                self.record(ri, 0.0, gr, affected);
            }
        }
    }
}

/// Walks both trees from the root over the training rows `xk` (Klein
/// coordinates). Nodes below a non-exact pair inherit its category.
pub fn compare_trees(fast: &DecisionTree, reference: &ReferenceTree, xk: ArrayView2<f64>, labels: Labels) -> NodeCounts {
    let mut w = Walker {
        fast,
        reference,
        xk,
        labels,
        counts: NodeCounts::default(),
    };
    w.walk(0, 0, (0..xk.nrows()).collect());
    w.counts
}

/// Smallest margin between the best and second-best candidate gain over
/// every internal node of `tree`, replaying the fit on `xk`. A lone
/// candidate is measured against not splitting (gain 0).
pub fn certification_margin(tree: &DecisionTree, xk: ArrayView2<f64>, labels: Labels) -> f64 {
    let features: Vec<usize> = (0..xk.ncols()).collect();
    let mut margin = f64::INFINITY;
    let mut stack = vec![(0usize, (0..xk.nrows()).collect::<Vec<usize>>())];
    while let Some((i, rows)) = stack.pop() {
        let Node::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } = tree.nodes()[i]
        else {
            continue;
        };
        let sub_x = xk.select(Axis(0), &rows);
        let sub_y = subset(labels, &rows);
        let candidates = candidate_splits(sub_x.view(), sub_y.labels(), &features).unwrap_or_default();
        let (mut best, mut second) = (0.0f64, 0.0f64);
        for c in &candidates {
            if c.gain > best {
                second = best;
                best = c.gain;
            } else if c.gain > second {
                second = c.gain;
            }
        }
        margin = margin.min(best - second);
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&k| xk[[k, feature]] <= threshold);
        stack.push((left, l));
        stack.push((right, r));
    }
    margin
}

pub fn compare_seed(cfg: &CompareConfig, seed: u64) -> Result<SeedReport> {
    let data = sample_mixture(&MixtureConfig {
        n_classes: cfg.n_classes,
        n_samples: cfg.n_samples,
        dim: cfg.dim,
        curvature: cfg.curvature,
        seed,
        task: Task::Classification,
        ..MixtureConfig::default()
    })?;
    let Targets::Classes(y) = &data.y else {
        unreachable!("classification mixture");
    };
    let n_train = ((cfg.n_samples as f64) * cfg.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, cfg.n_samples);
    let x_train = data.x.slice(s![..n_train, ..]);
    let x_test = data.x.slice(s![n_train.., ..]);
    let labels = Labels::Classes {
        ids: &y[..n_train],
        n_classes: cfg.n_classes,
    };
    let spec = HyperbolicModelSpec::new(cfg.curvature, InputGeometry::Hyperboloid, Task::Classification);
    let params = TreeParams {
        depth_limit: cfg.depth,
        ..TreeParams::default()
    };
    let fast = fit(x_train, labels, &spec, &params)?;
    let reference = fit_reference(x_train, labels, cfg.curvature, &params)?;
    let xk = preprocess(x_train, &spec)?;
    let counts = compare_trees(fast.tree(), &reference, xk.view(), labels);
    let min_margin = certification_margin(fast.tree(), xk.view(), labels);
    let train_agree = agreement(&fast.predict_simple(x_train)?, &reference.predict(x_train)?)?;
    let test_agree = agreement(&fast.predict_simple(x_test)?, &reference.predict(x_test)?)?;
    Ok(SeedReport {
        seed,
        counts,
        train_agree,
        test_agree,
        min_margin,
    })
}

/// Reports for seeds `cfg.seed .. cfg.seed + cfg.n_seeds`, in seed order.
pub fn run_compare(cfg: &CompareConfig) -> Result<Vec<SeedReport>> {
    (0..cfg.n_seeds as u64)
        .into_par_iter()
        .map(|i| compare_seed(cfg, cfg.seed + i))
        .collect()
}

pub fn write_csv(reports: &[SeedReport], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub seeds: usize,
    pub nodes: usize,
    pub exact: usize,
    pub tie_equiv: usize,
    pub mismatch: usize,
    pub certified_seeds: usize,
    pub mean_test_agree: f64,
}

impl Summary {
    pub fn of(reports: &[SeedReport]) -> Self {
        let mut s = Summary {
            seeds: reports.len(),
            ..Summary::default()
        };
        for r in reports {
            s.nodes += r.counts.nodes();
            s.exact += r.counts.exact;
            s.tie_equiv += r.counts.tie_equiv;
            s.mismatch += r.counts.mismatch;
            s.certified_seeds += r.certified() as usize;
            s.mean_test_agree += r.test_agree;
        }
        if !reports.is_empty() {
            s.mean_test_agree /= reports.len() as f64;
        }
        s
    }

    pub fn exact_fraction(&self) -> f64 {
        if self.nodes == 0 {
            1.0
        } else {
            self.exact as f64 / self.nodes as f64
        }
    }

    pub fn mismatch_fraction(&self) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            self.mismatch as f64 / self.nodes as f64
        }
    }
}
