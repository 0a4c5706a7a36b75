use fast_hyperdt::cart::{
    fit_tree, fit_tree_instrumented, DecisionTree, Labels, Node, Predictions, Targets, Task, TreeParams,
};
use fast_hyperdt::datagen::{sample_mixture, Mixture, MixtureConfig};
use fast_hyperdt::ensemble::{fit_forest, tree_sample, ForestParams};
use fast_hyperdt::geometry::{klein_to_poincare, Curvature, KleinPoint};
use fast_hyperdt::metrics::accuracy;
use fast_hyperdt::reference::{fit_reference, fit_reference_instrumented, AngularNode};
use fast_hyperdt::wrapper::{adjust_thresholds, fit, preprocess, HyperbolicModelSpec, InputGeometry};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mixture(seed: u64, n: usize, classes: usize, k: f64) -> Mixture {
    sample_mixture(&MixtureConfig {
        n_samples: n,
        n_classes: classes,
        curvature: Curvature::new(k).unwrap(),
        seed,
        ..MixtureConfig::default()
    })
    .unwrap()
}

fn hyperboloid_spec(k: Curvature, task: Task) -> HyperbolicModelSpec {
    HyperbolicModelSpec::new(k, InputGeometry::Hyperboloid, task)
}

/// `(node, L, R)` for every internal node, replaying `rows` through the tree.
fn gaps(tree: &DecisionTree, xk: &Array2<f64>, rows: &[usize]) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(0usize, rows.to_vec())];
    while let Some((i, rows)) = stack.pop() {
        if let Node::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } = tree.nodes()[i]
        {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&j| xk[[j, feature]] <= threshold);
            let lo = l.iter().map(|&j| xk[[j, feature]]).fold(f64::NEG_INFINITY, f64::max);
            let hi = r.iter().map(|&j| xk[[j, feature]]).fold(f64::INFINITY, f64::min);
            out.push((i, lo, hi));
            stack.push((left, l));
            stack.push((right, r));
        }
    }
    out
}

#[test]
fn postprocessing_and_perturbation_keep_training_leaves() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..60 {
        let k = Curvature::new([-0.5, -1.0, -2.0][seed as usize % 3]).unwrap();
        let m = mixture(seed, 300, 2 + seed as usize % 4, k.value());
        let xk = preprocess(m.x.view(), &hyperboloid_spec(k, Task::Classification)).unwrap();
        let params = TreeParams {
            depth_limit: 4,
            ..TreeParams::default()
        };
        let tree = fit_tree(xk.view(), m.y.labels(), &params).unwrap();
        let before = tree.apply(xk.view()).unwrap();
        let rows: Vec<usize> = (0..xk.nrows()).collect();
        let node_gaps = gaps(&tree, &xk, &rows);
        let (adjusted, warnings) = adjust_thresholds(tree.clone(), xk.view(), k).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(adjusted.apply(xk.view()).unwrap(), before);
        for &(i, lo, hi) in &node_gaps {
            let Node::Internal { threshold, .. } = adjusted.nodes()[i] else { unreachable!() };
            assert!(lo < threshold && threshold < hi, "node {i}: {threshold} not in ({lo}, {hi})");
        }
        let mut perturbed = tree.clone();
        for &(i, lo, hi) in &node_gaps {
            let t = lo + (hi - lo) * rng.random_range(0.001..0.999);
            perturbed.set_threshold(i, t).unwrap();
        }
        assert_eq!(perturbed.apply(xk.view()).unwrap(), before);
    }
}

#[test]
fn selective_and_simple_prediction_agree() {
    let k = Curvature::new(-1.0).unwrap();
    let train = mixture(3, 500, 4, -1.0);
    let test = mixture(4, 10_000, 4, -1.0);
    let params = TreeParams {
        depth_limit: 5,
        ..TreeParams::default()
    };
    let model = fit(train.x.view(), train.y.labels(), &hyperboloid_spec(k, Task::Classification), &params).unwrap();
    let simple = model.predict_simple(test.x.view()).unwrap();
    let (selective, counts) = model.predict_selective_counted(test.x.view()).unwrap();
    assert_eq!(simple, selective);
    assert!(counts.iter().all(|&c| c <= 5));
}

#[test]
fn converted_inputs_give_the_same_tree() {
    for k in [-0.5, -1.0, -2.0] {
        let kk = Curvature::new(k).unwrap();
        let m = mixture(8, 400, 3, k);
        let params = TreeParams::default();
        let hyper = fit(m.x.view(), m.y.labels(), &hyperboloid_spec(kk, Task::Classification), &params).unwrap();
        let xk = preprocess(m.x.view(), hyper.spec()).unwrap();
        let klein_spec = HyperbolicModelSpec::new(kk, InputGeometry::Klein, Task::Classification);
        let klein = fit(xk.view(), m.y.labels(), &klein_spec, &params).unwrap();
        assert_eq!(
            serde_json::to_string(hyper.tree()).unwrap(),
            serde_json::to_string(klein.tree()).unwrap()
        );

        let mut xp = Array2::zeros(xk.raw_dim());
        for (i, row) in xk.rows().into_iter().enumerate() {
            let p = klein_to_poincare(&KleinPoint::new(row.to_vec()).unwrap(), kk);
            for (j, v) in p.coords().iter().enumerate() {
                xp[[i, j]] = *v;
            }
        }
        let poincare_spec = HyperbolicModelSpec::new(kk, InputGeometry::Poincare, Task::Classification);
        let poincare = fit(xp.view(), m.y.labels(), &poincare_spec, &params).unwrap();
        for (a, b) in hyper.tree().nodes().iter().zip(poincare.tree().nodes()) {
            match (a, b) {
                (
                    Node::Internal { feature: fa, threshold: ta, .. },
                    Node::Internal { feature: fb, threshold: tb, .. },
                ) => {
                    assert_eq!(fa, fb);
                    assert!((ta - tb).abs() < 1e-12);
                }
                (Node::Leaf { .. }, Node::Leaf { .. }) => assert_eq!(a, b),
                _ => panic!("trees differ in shape"),
            }
        }
        assert_eq!(
            hyper.predict_simple(m.x.view()).unwrap(),
            poincare.predict_simple(xp.view()).unwrap()
        );
    }
}

#[test]
fn separated_clusters_are_learned_exactly() {
    let k = Curvature::new(-1.0).unwrap();
    let cfg = MixtureConfig {
        n_samples: 400,
        mean_scale: 2.0,
        cluster_scale: 0.02,
        seed: 2,
        ..MixtureConfig::default()
    };
    let m = sample_mixture(&cfg).unwrap();
    let model = fit(m.x.view(), m.y.labels(), &hyperboloid_spec(k, Task::Classification), &TreeParams::default()).unwrap();
    let Predictions::Classes(pred) = model.predict_simple(m.x.view()).unwrap() else { unreachable!() };
    assert_eq!(accuracy(&pred, &m.true_class).unwrap(), 1.0);
}

#[test]
fn small_clusters_are_mostly_separable() {
    let k = Curvature::new(-1.0).unwrap();
    let cfg = MixtureConfig {
        n_samples: 1000,
        mean_scale: 1.5,
        cluster_scale: 0.1,
        seed: 12,
        ..MixtureConfig::default()
    };
    let m = sample_mixture(&cfg).unwrap();
    let model = fit(m.x.view(), m.y.labels(), &hyperboloid_spec(k, Task::Classification), &TreeParams::default()).unwrap();
    let Predictions::Classes(pred) = model.predict_simple(m.x.view()).unwrap() else { unreachable!() };
    assert!(accuracy(&pred, &m.true_class).unwrap() > 0.95);
}

fn internal_fast(tree: &DecisionTree) -> Vec<(usize, f64)> {
    tree.nodes()
        .iter()
        .filter_map(|n| match n {
            Node::Internal { feature, threshold, .. } => Some((*feature, *threshold)),
            _ => None,
        })
        .collect()
}

#[test]
fn reference_and_fast_trees_coincide() {
    for seed in 0..100 {
        let kv = [-0.5, -1.0, -2.0][seed as usize % 3];
        let k = Curvature::new(kv).unwrap();
        let m = mixture(seed, 400, 2 + seed as usize % 3, kv);
        let params = TreeParams::default();
        let fast = fit(m.x.view(), m.y.labels(), &hyperboloid_spec(k, Task::Classification), &params).unwrap();
        let reference = fit_reference(m.x.view(), m.y.labels(), k, &params).unwrap();
        let ref_nodes: Vec<(usize, f64)> = reference
            .nodes()
            .iter()
            .filter_map(|n| match n {
                AngularNode::Internal { feature, theta, .. } => Some((*feature - 1, theta.cot())),
                _ => None,
            })
            .collect();
        let fast_nodes = internal_fast(fast.tree());
        assert_eq!(fast_nodes.len(), ref_nodes.len(), "seed {seed}");
        for ((fa, ta), (fb, tb)) in fast_nodes.iter().zip(&ref_nodes) {
            assert_eq!(fa, fb, "seed {seed}");
            assert!((ta - tb).abs() < 1e-9, "seed {seed}: {ta} vs {tb}");
        }
        assert_eq!(
            fast.predict_simple(m.x.view()).unwrap(),
            reference.predict(m.x.view()).unwrap()
        );
    }
}

#[test]
fn reference_regression_matches_fast() {
    let k = Curvature::new(-1.0).unwrap();
    let m = sample_mixture(&MixtureConfig {
        n_samples: 300,
        task: Task::Regression,
        n_classes: 3,
        seed: 5,
        ..MixtureConfig::default()
    })
    .unwrap();
    let params = TreeParams::default();
    let fast = fit(m.x.view(), m.y.labels(), &hyperboloid_spec(k, Task::Regression), &params).unwrap();
    let reference = fit_reference(m.x.view(), m.y.labels(), k, &params).unwrap();
    let a = fast.predict_simple(m.x.view()).unwrap();
    let b = reference.predict(m.x.view()).unwrap();
    for (x, y) in a.as_values().unwrap().iter().zip(b.as_values().unwrap()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn candidate_points_correspond() {
    let m = mixture(21, 200, 2, -1.0);
    for axis in 1..=2 {
        let mut klein: Vec<f64> = m.x.rows().into_iter().map(|r| r[axis] / r[0]).collect();
        let mut cots: Vec<f64> = m
            .x
            .rows()
            .into_iter()
            .map(|r| {
                let theta = f64::atan2(r[0], r[axis]);
                theta.cos() / theta.sin()
            })
            .collect();
        klein.sort_by(f64::total_cmp);
        cots.sort_by(f64::total_cmp);
        for (a, b) in klein.iter().zip(&cots) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn evaluation_counts_are_comparable() {
    let k = Curvature::new(-1.0).unwrap();
    for p in 7..=13 {
        let m = mixture(p, 1 << p, 2, -1.0);
        let xk = preprocess(m.x.view(), &hyperboloid_spec(k, Task::Classification)).unwrap();
        let rows: Vec<usize> = (0..xk.nrows()).collect();
        let params = TreeParams::default();
        let (_, fast) = fit_tree_instrumented(xk.view(), m.y.labels(), rows.clone(), &params).unwrap();
        let (_, reference) = fit_reference_instrumented(m.x.view(), m.y.labels(), k, rows, &params).unwrap();
        let ratio = reference.candidates_evaluated as f64 / fast.candidates_evaluated as f64;
        assert!((0.5..=2.0).contains(&ratio), "n=2^{p}: ratio {ratio}");
    }
}

#[test]
fn forest_trees_are_postprocessed_on_their_own_bootstrap() {
    let k = Curvature::new(-1.0).unwrap();
    let m = mixture(30, 300, 3, -1.0);
    let spec = hyperboloid_spec(k, Task::Classification);
    let params = ForestParams {
        n_trees: 12,
        seed: 99,
        ..ForestParams::default()
    };
    let forest = fit_forest(m.x.view(), m.y.labels(), &spec, &params).unwrap();
    let xk = preprocess(m.x.view(), &spec).unwrap();
    for (i, t) in forest.trees().iter().enumerate() {
        let (rows, _) = tree_sample(99, i, 300, true);
        assert_eq!(t.tree().training_indices(), Some(rows.as_slice()));
        assert!(t.postprocessed());
        for (node, lo, hi) in gaps(t.tree(), &xk, &rows) {
            let Node::Internal { threshold, .. } = t.tree().nodes()[node] else { unreachable!() };
            assert!(lo < threshold && threshold < hi);
        }
    }
}

#[test]
fn forest_is_deterministic_across_thread_counts() {
    let k = Curvature::new(-1.0).unwrap();
    let m = mixture(31, 500, 4, -1.0);
    let spec = hyperboloid_spec(k, Task::Classification);
    let params = ForestParams {
        n_trees: 16,
        seed: 5,
        ..ForestParams::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&fit_forest(m.x.view(), m.y.labels(), &spec, &params).unwrap()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
}

#[test]
fn regression_forest_averages_its_trees() {
    let k = Curvature::new(-1.0).unwrap();
    let m = sample_mixture(&MixtureConfig {
        n_samples: 300,
        task: Task::Regression,
        seed: 3,
        ..MixtureConfig::default()
    })
    .unwrap();
    assert!(matches!(m.y, Targets::Values(_)));
    let spec = hyperboloid_spec(k, Task::Regression);
    let forest = fit_forest(
        m.x.view(),
        m.y.labels(),
        &spec,
        &ForestParams {
            n_trees: 7,
            seed: 1,
            ..ForestParams::default()
        },
    )
    .unwrap();
    let mean = forest.predict(m.x.view()).unwrap();
    let per_tree: Vec<Vec<f64>> = forest
        .trees()
        .iter()
        .map(|t| t.predict_simple(m.x.view()).unwrap().as_values().unwrap().to_vec())
        .collect();
    for (r, v) in mean.as_values().unwrap().iter().enumerate() {
        let avg = per_tree.iter().map(|t| t[r]).sum::<f64>() / 7.0;
        assert!((v - avg).abs() < 1e-12);
    }
}

#[test]
fn labels_and_data_must_line_up() {
    let k = Curvature::new(-1.0).unwrap();
    let m = mixture(1, 20, 2, -1.0);
    let short = vec![0usize; 19];
    assert!(fit(m.x.view(), Labels::classes(&short), &hyperboloid_spec(k, Task::Classification), &TreeParams::default()).is_err());
}
