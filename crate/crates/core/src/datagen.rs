//! Mixtures of wrapped Gaussians on the hyperboloid.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cart::{Targets, Task};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm_sq, Curvature, GeometryError, LorentzPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub n_classes: usize,
    pub n_samples: usize,
    pub dim: usize,
    #[serde(rename = "K")]
    pub curvature: Curvature,
    pub mean_scale: f64,
    pub cluster_scale: f64,
    pub seed: u64,
    pub task: Task,
    pub regression_noise: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            n_classes: 2,
            n_samples: 100,
            dim: 2,
            curvature: Curvature::default(),
            mean_scale: 1.0,
            cluster_scale: 0.5,
            seed: 0,
            task: Task::Classification,
            regression_noise: 0.1,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::InvalidParameter("n_classes must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        for (name, v) in [("mean_scale", self.mean_scale), ("cluster_scale", self.cluster_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.regression_noise.is_finite() && self.regression_noise >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regression_noise must be non-negative, got {}",
                self.regression_noise
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// Hyperboloid points, one per row, timelike coordinate first.
    pub x: Array2<f64>,
    pub y: Targets,
    pub true_class: Vec<usize>,
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::Domain("tangent vector is not finite".into()).into())
    }
}

/// Exponential map at the hyperboloid origin of the tangent vector `(0, z)`.
pub fn exp_origin(z: &[f64], k: Curvature) -> Result<LorentzPoint> {
    check_finite(z)?;
    let norm = norm_sq(z).sqrt();
    let r = k.sqrt_neg() * norm;
    if r == 0.0 {
        return Ok(LorentzPoint::origin(z.len(), k));
    }
    let s = r.sinh() / r;
    let spatial: Vec<f64> = z.iter().map(|v| s * v).collect();
    Ok(LorentzPoint::from_spatial(&spatial, k)?)
}

/// Parallel transport of `(0, z)` from the origin to `mu` along the geodesic.
pub fn parallel_transport_origin_to(mu: &LorentzPoint, z: &[f64], k: Curvature) -> Result<Vec<f64>> {
    check_finite(z)?;
    if z.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: z.len(),
        });
    }
    let radius = k.radius();
    // <mu, v>_M with v = (0, z), and <origin, mu>_M = -radius * mu_0.
    let mv = dot(mu.spatial(), z);
    let denom = -radius * mu.time() + 1.0 / k.value();
    let c = mv / denom;
    let mut out = Vec::with_capacity(z.len() + 1);
    out.push(-c * (radius + mu.time()));
    out.extend(z.iter().zip(mu.spatial()).map(|(zi, mi)| zi - c * mi));
    Ok(out)
}

/// Exponential map at `mu` of an ambient tangent vector `v`.
pub fn exp_at(mu: &LorentzPoint, v: &[f64], k: Curvature) -> Result<LorentzPoint> {
    check_finite(v)?;
    if v.len() != mu.coords().len() {
        return Err(Error::DimensionMismatch {
            expected: mu.coords().len(),
            found: v.len(),
        });
    }
    let vv = (-v[0] * v[0] + norm_sq(&v[1..])).max(0.0);
    let r = k.sqrt_neg() * vv.sqrt();
    if r == 0.0 {
        return Ok(mu.clone());
    }
    let (ch, sh) = (r.cosh(), r.sinh() / r);
    let spatial: Vec<f64> = mu.spatial().iter().zip(&v[1..]).map(|(m, t)| ch * m + sh * t).collect();
    Ok(LorentzPoint::from_spatial(&spatial, k)?)
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let s: f64 = StandardNormal.sample(rng);
            scale * s
        })
        .collect()
}

/// Draws a balanced wrapped-Gaussian mixture. Point `i` belongs to class `i % n_classes`.
pub fn sample_mixture(cfg: &MixtureConfig) -> Result<Mixture> {
    cfg.validate()?;
    let k = cfg.curvature;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = (0..cfg.n_classes)
        .map(|_| exp_origin(&normal_vec(&mut rng, d, cfg.mean_scale), k))
        .collect::<Result<Vec<_>>>()?;
    let (slopes, intercepts): (Vec<Vec<f64>>, Vec<f64>) = match cfg.task {
        Task::Regression => (0..cfg.n_classes)
            .map(|_| {
                let w = normal_vec(&mut rng, d, 1.0);
                let b: f64 = StandardNormal.sample(&mut rng);
                (w, b)
            })
            .unzip(),
        Task::Classification => (Vec::new(), Vec::new()),
    };
    let mut x = Array2::zeros((cfg.n_samples, d + 1));
    let mut true_class = Vec::with_capacity(cfg.n_samples);
    let mut values = Vec::new();
    for i in 0..cfg.n_samples {
        let c = i % cfg.n_classes;
        let z = normal_vec(&mut rng, d, cfg.cluster_scale);
        let v = parallel_transport_origin_to(&means[c], &z, k)?;
        let p = exp_at(&means[c], &v, k)?;
        for (j, val) in p.coords().iter().enumerate() {
            x[[i, j]] = *val;
        }
        if cfg.task == Task::Regression {
            let eps: f64 = StandardNormal.sample(&mut rng);
            values.push(dot(&slopes[c], &z) + intercepts[c] + cfg.regression_noise * eps);
        }
        true_class.push(c);
    }
    let y = match cfg.task {
        Task::Classification => Targets::Classes(true_class.clone()),
        Task::Regression => Targets::Values(values),
    };
    Ok(Mixture { x, y, true_class })
}
