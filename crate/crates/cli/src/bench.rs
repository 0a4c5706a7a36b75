//! Training-time benchmarks for the fast and reference backends.

use std::io::Write;
use std::time::Instant;

use fast_hyperdt::cart::{Task, TreeParams};
use fast_hyperdt::datagen::{sample_mixture, MixtureConfig};
use fast_hyperdt::geometry::Curvature;
use fast_hyperdt::reference::fit_reference;
use fast_hyperdt::wrapper::{fit, HyperbolicModelSpec, InputGeometry};

use crate::error::{CliError, Result};
use crate::model_file::Backend;

pub const CSV_HEADER: &str = "backend,n,dim,depth,repeats,median_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub dim: usize,
    pub depth: usize,
    pub repeats: usize,
    pub seed: u64,
    pub n_classes: usize,
    pub backends: Vec<Backend>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_list: default_n_list(),
            dim: 2,
            depth: 3,
            repeats: 5,
            seed: 0,
            n_classes: 2,
            backends: vec![Backend::Fast, Backend::Reference],
        }
    }
}

/// `2^3, 2^4, ..., 2^15`.
pub fn default_n_list() -> Vec<usize> {
    (3..=15).map(|p| 1usize << p).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub backend: Backend,
    pub n: usize,
    pub median_seconds: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Median wall time of `repeats` training runs per backend and size.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 {
        return Err(CliError::Usage("repeats must be at least 1".into()));
    }
    let k = Curvature::default();
    let spec = HyperbolicModelSpec::new(k, InputGeometry::Hyperboloid, Task::Classification);
    let params = TreeParams {
        depth_limit: cfg.depth,
        ..TreeParams::default()
    };
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let data = sample_mixture(&MixtureConfig {
            n_samples: n,
            dim: cfg.dim,
            n_classes: cfg.n_classes,
            seed: cfg.seed,
            ..MixtureConfig::default()
        })?;
        let labels = data.y.labels();
        for &backend in &cfg.backends {
            let mut times = Vec::with_capacity(cfg.repeats);
            for _ in 0..cfg.repeats {
                let start = Instant::now();
                match backend {
                    Backend::Fast => {
                        std::hint::black_box(fit(data.x.view(), labels, &spec, &params)?);
                    }
                    Backend::Reference => {
                        std::hint::black_box(fit_reference(data.x.view(), labels, k, &params)?);
                    }
                }
                times.push(start.elapsed().as_secs_f64());
            }
            rows.push(BenchRow {
                backend,
                n,
                median_seconds: median(&mut times),
            });
        }
    }
    Ok(rows)
}

pub fn write_csv(cfg: &BenchConfig, rows: &[BenchRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let backend = match r.backend {
            Backend::Fast => "fast",
            Backend::Reference => "reference",
        };
        writeln!(
            w,
            "{backend},{},{},{},{},{}",
            r.n, cfg.dim, cfg.depth, cfg.repeats, r.median_seconds
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn one_row_per_size_and_backend() {
        let cfg = BenchConfig {
            n_list: vec![8, 16, 32],
            repeats: 1,
            ..BenchConfig::default()
        };
        let rows = run_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        let mut buf = Vec::new();
        write_csv(&cfg, &rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }
}
