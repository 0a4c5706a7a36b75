//! Argument definitions and command implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fast_hyperdt::cart::{Predictions, Task, TreeParams};
use fast_hyperdt::datagen::{sample_mixture, MixtureConfig};
use fast_hyperdt::ensemble::{fit_forest, Aggregation, ForestParams};
use fast_hyperdt::geometry::{klein_to_poincare, Curvature, KleinPoint};
use fast_hyperdt::metrics::score;
use fast_hyperdt::reference::fit_reference;
use fast_hyperdt::wrapper::{preprocess, HyperbolicModelSpec, InputGeometry};
use ndarray::Array2;

use crate::bench::{self, BenchConfig};
use crate::compare::{self, CompareConfig, Summary};
use crate::dataset::{Dataset, DatasetHeader};
use crate::error::{CliError, Result};
use crate::model_file::{Backend, Model, ParamsEcho};

#[derive(Debug, Parser)]
#[command(name = "hyperdt", version, about = "Hyperbolic decision trees and random forests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a wrapped-Gaussian mixture and write it as a dataset CSV.
    Generate(GenerateArgs),
    /// Fit a tree or forest on a dataset and write the model file.
    Train(TrainArgs),
    /// Write one prediction per dataset row.
    Predict(PredictArgs),
    /// Print accuracy (classification) or MSE (regression).
    Evaluate(EvaluateArgs),
    /// Compare fast and reference trees node by node over many seeds.
    Compare(CompareArgs),
    /// Time training of both backends over a range of sizes.
    Bench(BenchArgs),
}

fn parse_geometry(s: &str) -> std::result::Result<InputGeometry, String> {
    s.parse().map_err(|e: fast_hyperdt::Error| e.to_string())
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: fast_hyperdt::Error| e.to_string())
}

fn parse_aggregation(s: &str) -> std::result::Result<Aggregation, String> {
    s.parse().map_err(|e: fast_hyperdt::Error| e.to_string())
}

fn parse_curvature(s: &str) -> std::result::Result<Curvature, String> {
    let k: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    Curvature::new(k).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long = "K", default_value = "-1", value_parser = parse_curvature, allow_hyphen_values = true)]
    pub curvature: Curvature,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "classification", value_parser = parse_task)]
    pub task: Task,
    #[arg(long, default_value = "hyperboloid", value_parser = parse_geometry)]
    pub geometry: InputGeometry,
    #[arg(long, default_value_t = 1.0)]
    pub mean_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub cluster_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long, value_enum, default_value = "fast")]
    pub backend: Backend,
    /// Must match the dataset header when given.
    #[arg(long, value_parser = parse_geometry)]
    pub geometry: Option<InputGeometry>,
    /// Must match the dataset header when given.
    #[arg(long = "K", value_parser = parse_curvature, allow_hyphen_values = true)]
    pub curvature: Option<Curvature>,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 1)]
    pub n_trees: usize,
    /// Defaults to true when more than one tree is fitted.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bootstrap: Option<bool>,
    #[arg(long)]
    pub feature_subsample: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub min_samples_split: usize,
    #[arg(long, value_parser = parse_aggregation)]
    pub aggregation: Option<Aggregation>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Walk hyperboloid rows computing only the coordinates each node needs.
    #[arg(long)]
    pub selective: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long = "K", default_value = "-1", value_parser = parse_curvature, allow_hyphen_values = true)]
    pub curvature: Curvature,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated sample sizes; defaults to 8,16,...,32768.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

/// Re-expresses hyperboloid rows in `geometry`.
fn convert(x: &Array2<f64>, k: Curvature, geometry: InputGeometry) -> Result<Array2<f64>> {
    let spec = HyperbolicModelSpec::new(k, InputGeometry::Hyperboloid, Task::Classification);
    match geometry {
        InputGeometry::Hyperboloid => Ok(x.clone()),
        InputGeometry::Klein => Ok(preprocess(x.view(), &spec)?),
        InputGeometry::Poincare => {
            let mut xk = preprocess(x.view(), &spec)?;
            for mut row in xk.rows_mut() {
                let v = KleinPoint::new(row.to_vec()).map_err(fast_hyperdt::Error::from)?;
                for (dst, src) in row.iter_mut().zip(klein_to_poincare(&v, k).coords()) {
                    *dst = *src;
                }
            }
            Ok(xk)
        }
    }
}

pub fn generate(args: &GenerateArgs, out: &mut impl Write) -> Result<()> {
    let cfg = MixtureConfig {
        n_classes: args.classes,
        n_samples: args.n,
        dim: args.dim,
        curvature: args.curvature,
        mean_scale: args.mean_scale,
        cluster_scale: args.cluster_scale,
        seed: args.seed,
        task: args.task,
        regression_noise: args.noise,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mixture = sample_mixture(&cfg)?;
    let header = DatasetHeader {
        geometry: args.geometry,
        curvature: args.curvature,
        d: args.dim,
        task: args.task,
    };
    let x = convert(&mixture.x, args.curvature, args.geometry)?;
    let ds = Dataset::new(header, x, mixture.y)?;
    ds.write(&args.out)?;
    writeln!(
        out,
        "wrote {} rows ({} geometry, d={}, K={}, {}) to {}",
        ds.n_rows(),
        args.geometry,
        args.dim,
        args.curvature.value(),
        args.task,
        args.out.display()
    )
    .map_err(|e| CliError::io(&args.out, e))
}

/// Fits the model described by `args` on `ds`.
pub fn fit_model(args: &TrainArgs, ds: &Dataset) -> Result<Model> {
    let h = ds.header;
    if let Some(g) = args.geometry {
        if g != h.geometry {
            return Err(CliError::Format(format!(
                "--geometry {g} does not match the dataset header ({})",
                h.geometry
            )));
        }
    }
    if let Some(k) = args.curvature {
        if k != h.curvature {
            return Err(CliError::Format(format!(
                "--K {} does not match the dataset header ({})",
                k.value(),
                h.curvature.value()
            )));
        }
    }
    if args.n_trees == 0 {
        return Err(CliError::Usage("--n-trees must be at least 1".into()));
    }
    let bootstrap = args.bootstrap.unwrap_or(args.n_trees > 1);
    let params = ParamsEcho {
        depth: args.depth,
        n_trees: args.n_trees,
        bootstrap,
        feature_subsample: args.feature_subsample,
        min_samples_split: args.min_samples_split,
    };
    let spec = h.spec();
    match args.backend {
        Backend::Fast => {
            let forest = fit_forest(
                ds.x.view(),
                ds.y.labels(),
                &spec,
                &ForestParams {
                    n_trees: args.n_trees,
                    bootstrap,
                    feature_subsample: args.feature_subsample,
                    depth_limit: args.depth,
                    min_samples_split: args.min_samples_split,
                    seed: args.seed,
                    aggregation: args.aggregation,
                },
            )?;
            Ok(Model::Fast { forest, params })
        }
        Backend::Reference => {
            if args.n_trees != 1 || bootstrap || args.aggregation.is_some() {
                return Err(CliError::Usage(
                    "the reference backend fits a single tree without bootstrap or aggregation".into(),
                ));
            }
            let x = ds.to_hyperboloid()?;
            let tree = fit_reference(
                x.view(),
                ds.y.labels(),
                h.curvature,
                &TreeParams {
                    depth_limit: args.depth,
                    min_samples_split: args.min_samples_split,
                    feature_subsample: args.feature_subsample,
                    seed: args.seed,
                },
            )?;
            Ok(Model::Reference {
                spec,
                tree,
                params,
                seed: args.seed,
            })
        }
    }
}

pub fn train(args: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let ds = Dataset::read(&args.data)?;
    let start = Instant::now();
    let model = fit_model(args, &ds)?;
    let elapsed = start.elapsed().as_secs_f64();
    model.save(&args.model_out)?;
    writeln!(
        out,
        "trained {} model: {} node(s) in {:.6} s, written to {}",
        match args.backend {
            Backend::Fast => "fast",
            Backend::Reference => "reference",
        },
        model.n_nodes(),
        elapsed,
        args.model_out.display()
    )
    .map_err(|e| CliError::io(&args.model_out, e))
}

fn load_pair(model: &Path, data: &Path) -> Result<(Model, Dataset)> {
    let model = Model::load(model)?;
    let ds = Dataset::read(data)?;
    let spec = model.spec();
    if ds.header.geometry != spec.input_geometry || ds.header.curvature != spec.curvature {
        return Err(CliError::Format(format!(
            "dataset ({} K={}) does not match the model ({} K={})",
            ds.header.geometry,
            ds.header.curvature.value(),
            spec.input_geometry,
            spec.curvature.value()
        )));
    }
    if ds.header.d != model.n_features() {
        return Err(CliError::Format(format!(
            "dataset has d={} but the model expects d={}",
            ds.header.d,
            model.n_features()
        )));
    }
    Ok((model, ds))
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let (model, ds) = load_pair(&args.model, &args.data)?;
    let pred = if args.selective {
        model.predict_selective(ds.x.view())?
    } else {
        model.predict(ds.x.view())?
    };
    let mut w = create(&args.out)?;
    let io = |e| CliError::io(&args.out, e);
    writeln!(w, "prediction").map_err(io)?;
    match &pred {
        Predictions::Classes(c) => c.iter().try_for_each(|v| writeln!(w, "{v}")),
        Predictions::Values(v) => v.iter().try_for_each(|v| writeln!(w, "{v}")),
    }
    .map_err(io)?;
    w.flush().map_err(io)
}

/// Accuracy or MSE of `model` on `data`, with its metric name.
pub fn evaluate_score(model: &Path, data: &Path) -> Result<(&'static str, f64)> {
    let (model, ds) = load_pair(model, data)?;
    let pred = model.predict(ds.x.view())?;
    let name = match ds.header.task {
        Task::Classification => "accuracy",
        Task::Regression => "mse",
    };
    Ok((name, score(&pred, &ds.y)?))
}

pub fn evaluate(args: &EvaluateArgs, out: &mut impl Write) -> Result<()> {
    let (name, value) = evaluate_score(&args.model, &args.data)?;
    writeln!(out, "{name} {value:.6}").map_err(|e| CliError::io(&args.data, e))
}

pub fn compare(args: &CompareArgs, out: &mut impl Write) -> Result<()> {
    let cfg = CompareConfig {
        n_seeds: args.seeds,
        seed: args.seed,
        n_samples: args.n,
        dim: args.dim,
        n_classes: args.classes,
        depth: args.depth,
        curvature: args.curvature,
        ..CompareConfig::default()
    };
    let reports = compare::run_compare(&cfg)?;
    let mut w = create(&args.out)?;
    compare::write_csv(&reports, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&args.out, e))?;
    let s = Summary::of(&reports);
    writeln!(
        out,
        "{} seeds, {} nodes: exact {:.4}, tie-equivalent {}, mismatch {}, certified seeds {}, mean test agreement {:.4}",
        s.seeds,
        s.nodes,
        s.exact_fraction(),
        s.tie_equiv,
        s.mismatch,
        s.certified_seeds,
        s.mean_test_agree
    )
    .map_err(|e| CliError::io(&args.out, e))
}

pub fn bench(args: &BenchArgs, out: &mut impl Write) -> Result<()> {
    let cfg = BenchConfig {
        n_list: if args.n_list.is_empty() {
            bench::default_n_list()
        } else {
            args.n_list.clone()
        },
        dim: args.dim,
        depth: args.depth,
        repeats: args.repeats,
        seed: args.seed,
        ..BenchConfig::default()
    };
    let rows = bench::run_bench(&cfg)?;
    let mut w = create(&args.out)?;
    bench::write_csv(&cfg, &rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&args.out, e))?;
    writeln!(out, "wrote {} timing rows to {}", rows.len(), args.out.display())
        .map_err(|e| CliError::io(&args.out, e))
}

pub fn run(cli: &Cli, out: &mut impl Write) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train(a, out),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Compare(a) => compare(a, out),
        Command::Bench(a) => bench(a, out),
    }
}
