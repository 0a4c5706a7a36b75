//! Dataset CSV files.
//!
//! ```text
//! # geometry=hyperboloid K=-1 d=2 task=classification
//! 1.2,0.4,0.5,0
//! ...
//! ```
//!
//! Each row holds the coordinates followed by the label or target.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fast_hyperdt::cart::{Targets, Task};
use fast_hyperdt::geometry::{klein_to_lorentz, Curvature, KleinPoint};
use fast_hyperdt::wrapper::{preprocess, HyperbolicModelSpec, InputGeometry};
use ndarray::Array2;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub geometry: InputGeometry,
    pub curvature: Curvature,
    pub d: usize,
    pub task: Task,
}

impl DatasetHeader {
    pub fn columns(&self) -> usize {
        self.geometry.columns(self.d)
    }

    pub fn spec(&self) -> HyperbolicModelSpec {
        HyperbolicModelSpec::new(self.curvature, self.geometry, self.task)
    }
}

impl std::fmt::Display for DatasetHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "# geometry={} K={} d={} task={}",
            self.geometry,
            self.curvature.value(),
            self.d,
            self.task
        )
    }
}

impl std::str::FromStr for DatasetHeader {
    type Err = CliError;

    fn from_str(line: &str) -> Result<Self> {
        let body = line
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| CliError::Format("dataset header must start with '#'".into()))?;
        let (mut geometry, mut curvature, mut d, mut task) = (None, None, None, None);
        for field in body.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| CliError::Format(format!("malformed header field '{field}'")))?;
            let bad = |what: &str| CliError::Format(format!("bad {what} '{value}' in header"));
            match key {
                "geometry" => geometry = Some(value.parse().map_err(|_| bad("geometry"))?),
                "K" => {
                    let k: f64 = value.parse().map_err(|_| bad("K"))?;
                    curvature = Some(Curvature::new(k).map_err(|_| bad("K"))?);
                }
                "d" => d = Some(value.parse().map_err(|_| bad("d"))?),
                "task" => task = Some(value.parse().map_err(|_| bad("task"))?),
                other => return Err(CliError::Format(format!("unknown header field '{other}'"))),
            }
        }
        let missing = |what: &str| CliError::Format(format!("header is missing {what}"));
        Ok(DatasetHeader {
            geometry: geometry.ok_or_else(|| missing("geometry"))?,
            curvature: curvature.ok_or_else(|| missing("K"))?,
            d: d.ok_or_else(|| missing("d"))?,
            task: task.ok_or_else(|| missing("task"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub x: Array2<f64>,
    pub y: Targets,
}

impl Dataset {
    pub fn new(header: DatasetHeader, x: Array2<f64>, y: Targets) -> Result<Self> {
        if x.ncols() != header.columns() {
            return Err(CliError::Format(format!(
                "expected {} coordinate columns, found {}",
                header.columns(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() || y.task() != header.task {
            return Err(CliError::Format("targets do not match the coordinates or task".into()));
        }
        Ok(Dataset { header, x, y })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// The same points on the hyperboloid.
    pub fn to_hyperboloid(&self) -> Result<Array2<f64>> {
        to_hyperboloid(&self.x, &self.header.spec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| CliError::io(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", self.header)?;
        for (i, row) in self.x.rows().into_iter().enumerate() {
            for v in row {
                write!(w, "{v},")?;
            }
            match &self.y {
                Targets::Classes(c) => writeln!(w, "{}", c[i])?,
                Targets::Values(v) => writeln!(w, "{}", v[i])?,
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut first = String::new();
        r.read_line(&mut first).map_err(|e| CliError::Format(e.to_string()))?;
        let header: DatasetHeader = first.parse()?;
        let mut rest = String::new();
        r.read_to_string(&mut rest).map_err(|e| CliError::Format(e.to_string()))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(rest.as_bytes());
        let cols = header.columns();
        let mut coords = Vec::new();
        let mut classes = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != cols + 1 {
                return Err(CliError::Format(format!(
                    "data row {}: expected {} fields, found {}",
                    i + 1,
                    cols + 1,
                    record.len()
                )));
            }
            for field in record.iter().take(cols) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| CliError::Format(format!("data row {}: bad number '{field}'", i + 1)))?;
                coords.push(v);
            }
            let label = &record[cols];
            let bad = || CliError::Format(format!("data row {}: bad label '{label}'", i + 1));
            match header.task {
                Task::Classification => classes.push(label.parse::<usize>().map_err(|_| bad())?),
                Task::Regression => values.push(label.parse::<f64>().map_err(|_| bad())?),
            }
        }
        let n = coords.len() / cols.max(1);
        let x = Array2::from_shape_vec((n, cols), coords).map_err(|e| CliError::Format(e.to_string()))?;
        let y = match header.task {
            Task::Classification => Targets::Classes(classes),
            Task::Regression => Targets::Values(values),
        };
        Dataset::new(header, x, y)
    }
}

/// Lifts rows in the declared geometry onto the hyperboloid.
pub fn to_hyperboloid(x: &Array2<f64>, spec: &HyperbolicModelSpec) -> Result<Array2<f64>> {
    if spec.input_geometry == InputGeometry::Hyperboloid {
        preprocess(x.view(), spec)?;
        return Ok(x.clone());
    }
    let xk = preprocess(x.view(), spec)?;
    let mut out = Array2::zeros((xk.nrows(), xk.ncols() + 1));
    for (i, row) in xk.rows().into_iter().enumerate() {
        let v = KleinPoint::new(row.to_vec()).map_err(fast_hyperdt::Error::from)?;
        for (j, c) in klein_to_lorentz(&v, spec.curvature).coords().iter().enumerate() {
            out[[i, j]] = *c;
        }
    }
    Ok(out)
}
