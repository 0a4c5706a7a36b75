//! Versioned JSON model files.

use std::fs;
use std::path::Path;

use fast_hyperdt::cart::{DecisionTree, Node, Predictions, Task};
use fast_hyperdt::ensemble::{Aggregation, Forest};
use fast_hyperdt::reference::{AngularNode, ReferenceTree};
use fast_hyperdt::wrapper::{HyperbolicModelSpec, HyperbolicTree};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::to_hyperboloid;
use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Fast,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsEcho {
    pub depth: usize,
    pub n_trees: usize,
    pub bootstrap: bool,
    pub feature_subsample: Option<usize>,
    pub min_samples_split: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub backend: Backend,
    pub spec: HyperbolicModelSpec,
    pub params: ParamsEcho,
    pub n_features: usize,
    pub n_classes: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// One node list per tree, preorder with the root first.
    pub trees: Vec<serde_json::Value>,
}

/// A model ready for prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Fast { forest: Forest, params: ParamsEcho },
    Reference {
        spec: HyperbolicModelSpec,
        tree: ReferenceTree,
        params: ParamsEcho,
        seed: u64,
    },
}

impl Model {
    pub fn spec(&self) -> &HyperbolicModelSpec {
        match self {
            Model::Fast { forest, .. } => forest.spec(),
            Model::Reference { spec, .. } => spec,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Fast { forest, .. } => forest.n_features(),
            Model::Reference { tree, .. } => tree.n_features(),
        }
    }

    /// Internal plus leaf nodes over all trees.
    pub fn n_nodes(&self) -> usize {
        match self {
            Model::Fast { forest, .. } => forest.trees().iter().map(|t| t.tree().n_nodes()).sum(),
            Model::Reference { tree, .. } => tree.nodes().len(),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Predictions> {
        match self {
            Model::Fast { forest, .. } => Ok(forest.predict(x)?),
            Model::Reference { spec, tree, .. } => {
                let lifted = to_hyperboloid(&x.to_owned(), spec)?;
                Ok(tree.predict(lifted.view())?)
            }
        }
    }

    /// Single-tree fast models walk hyperboloid rows lazily; other models
    /// fall back to [`Model::predict`].
    pub fn predict_selective(&self, x: ArrayView2<f64>) -> Result<Predictions> {
        match self {
            Model::Fast { forest, .. } if forest.n_trees() == 1 => Ok(forest.trees()[0].predict_selective(x)?),
            _ => self.predict(x),
        }
    }

    pub fn to_file(&self) -> Result<ModelFile> {
        Ok(match self {
            Model::Fast { forest, params } => ModelFile {
                format_version: FORMAT_VERSION,
                backend: Backend::Fast,
                spec: *forest.spec(),
                params: params.clone(),
                n_features: forest.n_features(),
                n_classes: forest.n_classes(),
                aggregation: forest.aggregation(),
                seed: forest.seed(),
                trees: forest
                    .trees()
                    .iter()
                    .map(|t| serde_json::to_value(t.tree().nodes()))
                    .collect::<std::result::Result<_, _>>()?,
            },
            Model::Reference {
                spec,
                tree,
                params,
                seed,
            } => ModelFile {
                format_version: FORMAT_VERSION,
                backend: Backend::Reference,
                spec: *spec,
                params: params.clone(),
                n_features: tree.n_features(),
                n_classes: tree.n_classes(),
                aggregation: Aggregation::default_for(spec.task),
                seed: *seed,
                trees: vec![serde_json::to_value(tree.nodes())?],
            },
        })
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(CliError::Format(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let spec = file.spec;
        let n_classes = if spec.task == Task::Classification { file.n_classes } else { 0 };
        match file.backend {
            Backend::Fast => {
                let trees = file
                    .trees
                    .into_iter()
                    .map(|value| {
                        let nodes: Vec<Node> = serde_json::from_value(value)?;
                        let tree =
                            DecisionTree::from_nodes(spec.task, file.n_features, n_classes, file.params.depth, nodes)?;
                        Ok(HyperbolicTree::from_parts(spec, tree)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let forest = Forest::from_parts(spec, file.aggregation, file.seed, trees)?;
                Ok(Model::Fast {
                    forest,
                    params: file.params,
                })
            }
            Backend::Reference => {
                let [value]: [serde_json::Value; 1] = file
                    .trees
                    .try_into()
                    .map_err(|_| CliError::Format("reference models hold exactly one tree".into()))?;
                let nodes: Vec<AngularNode> = serde_json::from_value(value)?;
                let tree = ReferenceTree::from_nodes(
                    spec.task,
                    spec.curvature,
                    file.n_features,
                    n_classes,
                    file.params.depth,
                    nodes,
                )?;
                Ok(Model::Reference {
                    spec,
                    tree,
                    params: file.params,
                    seed: file.seed,
                })
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_file()?)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Model::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Model::from_json(&text)
    }
}
