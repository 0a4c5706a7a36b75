//! Decision trees and random forests for data on the hyperboloid.
//!
//! Points are mapped to the Klein ball, where hyperbolic hyperplanes through
//! the origin become axis-parallel Euclidean hyperplanes. A plain CART engine
//! fits on the Klein coordinates and thresholds are then moved to the
//! hyperbolic midpoint between the neighbouring training points.
//!
//! ```
//! use fast_hyperdt::cart::{Labels, Task, TreeParams};
//! use fast_hyperdt::datagen::{sample_mixture, MixtureConfig};
//! use fast_hyperdt::wrapper::{fit, HyperbolicModelSpec, InputGeometry};
//!
//! let cfg = MixtureConfig { n_samples: 200, seed: 1, ..MixtureConfig::default() };
//! let data = sample_mixture(&cfg).unwrap();
//! let spec = HyperbolicModelSpec::new(cfg.curvature, InputGeometry::Hyperboloid, Task::Classification);
//! let model = fit(data.x.view(), data.y.labels(), &spec, &TreeParams::default()).unwrap();
//! let pred = model.predict_simple(data.x.view()).unwrap();
//! assert_eq!(pred.len(), 200);
//! ```

pub mod cart;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod reference;
pub mod wrapper;

pub use error::{Error, Result};
