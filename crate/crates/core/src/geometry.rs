//! Numerical kernel for the Lorentz (hyperboloid), Beltrami-Klein and
//! Poincaré representations of hyperbolic space with curvature `K < 0`.
//!
//! Conventions used throughout the crate:
//!
//! * A hyperboloid point `u = (u_0, u_1, ..., u_d)` satisfies
//!   `<u,u>_M = 1/K` and `u_0 > 0`, with `<u,v>_M = -u_0 v_0 + sum u_i v_i`.
//! * Its Klein coordinates are the ratios `u_i / u_0`. They lie in the open
//!   unit ball for every curvature, so thresholds on a Klein coordinate are
//!   directly comparable with the angle test `x_i sin(t) - x_0 cos(t)`.
//! * The Poincaré ball has radius `1/sqrt(-K)`.
//!
//! ```text
//! Klein -> Lorentz:   u_0 = 1 / sqrt(-K (1 - |v|^2)),  u_i = v_i u_0
//! Poincaré -> Klein:  v   = 2 sqrt(-K) p / (1 - K |p|^2)
//! Klein -> Poincaré:  p   = v / (sqrt(-K) (1 + sqrt(1 - |v|^2)))
//! ```

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for hyperboloid membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Arccosh arguments in `[1 - ACOSH_CLAMP_TOL, 1)` are treated as 1.
pub const ACOSH_CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("curvature must be finite and strictly negative, got {0}")]
    InvalidCurvature(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperboloid point: {0}")]
    InvalidPoint(String),
    #[error("point outside the open ball: squared norm {norm_sq} >= {limit}")]
    OutOfBall { norm_sq: f64, limit: f64 },
    #[error("argument outside domain: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Sectional curvature `K`, always finite and strictly negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k < 0.0 {
            Ok(Curvature(k))
        } else {
            Err(GeometryError::InvalidCurvature(k))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `sqrt(-K)`.
    #[inline]
    pub fn sqrt_neg(self) -> f64 {
        (-self.0).sqrt()
    }

    /// Radius `1/sqrt(-K)` of the Poincaré ball; also the timelike coordinate of the origin.
    #[inline]
    pub fn radius(self) -> f64 {
        1.0 / self.sqrt_neg()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(-1.0)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = GeometryError;

    fn try_from(k: f64) -> Result<Self> {
        Curvature::new(k)
    }
}

impl From<Curvature> for f64 {
    fn from(k: Curvature) -> f64 {
        k.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn check_finite(coords: &[f64], what: &str) -> Result<()> {
    if coords.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::Domain(format!("{what} has non-finite coordinates")))
    }
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        })
    }
}

/// A point on the upper sheet of the hyperboloid. Index 0 is timelike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzPoint(Vec<f64>);

impl LorentzPoint {
    /// Validates `coords` against the hyperboloid for `k` and rescales the
    /// timelike coordinate so the constraint holds to machine precision.
    pub fn new(mut coords: Vec<f64>, k: Curvature) -> Result<Self> {
        Self::validate(&coords, k)?;
        coords[0] = (norm_sq(&coords[1..]) - 1.0 / k.value()).sqrt();
        Ok(LorentzPoint(coords))
    }

    /// Builds the point whose spacelike part is `spatial`.
    pub fn from_spatial(spatial: &[f64], k: Curvature) -> Result<Self> {
        check_finite(spatial, "spatial vector")?;
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push((norm_sq(spatial) - 1.0 / k.value()).sqrt());
        coords.extend_from_slice(spatial);
        Ok(LorentzPoint(coords))
    }

    /// The hyperboloid origin `(1/sqrt(-K), 0, ..., 0)` in `d` dimensions.
    pub fn origin(d: usize, k: Curvature) -> Self {
        let mut coords = vec![0.0; d + 1];
        coords[0] = k.radius();
        LorentzPoint(coords)
    }

    /// Checks membership without modifying anything.
    pub fn validate(coords: &[f64], k: Curvature) -> Result<()> {
        if coords.len() < 2 {
            return Err(GeometryError::InvalidPoint(format!(
                "need at least 2 ambient coordinates, found {}",
                coords.len()
            )));
        }
        check_finite(coords, "hyperboloid point")?;
        if coords[0] <= 0.0 {
            return Err(GeometryError::InvalidPoint(format!(
                "timelike coordinate must be positive, found {}",
                coords[0]
            )));
        }
        let target = 1.0 / k.value();
        let inner = minkowski_inner_unchecked(coords, coords);
        let scale = target.abs().max(coords[0] * coords[0]);
        if (inner - target).abs() > MEMBERSHIP_TOL * scale {
            return Err(GeometryError::InvalidPoint(format!(
                "<u,u>_M = {inner}, expected {target}"
            )));
        }
        Ok(())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn time(&self) -> f64 {
        self.0[0]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.0[1..]
    }

    /// Intrinsic dimension `d` (ambient length minus one).
    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }
}

/// A point in the open unit ball of the Beltrami-Klein model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KleinPoint(Vec<f64>);

impl KleinPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::validate(&coords)?;
        Ok(KleinPoint(coords))
    }

    pub fn validate(coords: &[f64]) -> Result<()> {
        check_finite(coords, "Klein point")?;
        let n2 = norm_sq(coords);
        if n2 < 1.0 {
            Ok(())
        } else {
            Err(GeometryError::OutOfBall {
                norm_sq: n2,
                limit: 1.0,
            })
        }
    }

    pub fn origin(d: usize) -> Self {
        KleinPoint(vec![0.0; d])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A point in the open Poincaré ball of squared radius `-1/K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincarePoint(Vec<f64>);

impl PoincarePoint {
    pub fn new(coords: Vec<f64>, k: Curvature) -> Result<Self> {
        Self::validate(&coords, k)?;
        Ok(PoincarePoint(coords))
    }

    pub fn validate(coords: &[f64], k: Curvature) -> Result<()> {
        check_finite(coords, "Poincaré point")?;
        let n2 = norm_sq(coords);
        let limit = -1.0 / k.value();
        if n2 < limit {
            Ok(())
        } else {
            Err(GeometryError::OutOfBall { norm_sq: n2, limit })
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Angle `theta` in `(0, pi)` of the HyperDT split normal `(-cos t, 0, .., sin t, .., 0)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SplitAngle(f64);

impl SplitAngle {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && theta > 0.0 && theta < std::f64::consts::PI {
            Ok(SplitAngle(theta))
        } else {
            Err(GeometryError::Domain(format!("angle {theta} not in (0, pi)")))
        }
    }

    /// `arccot(ratio)` with range `(0, pi)`; for a hyperboloid point this is
    /// the angle of `x_i / x_0`.
    pub fn from_cot(ratio: f64) -> Result<Self> {
        if !ratio.is_finite() {
            return Err(GeometryError::Domain(format!("cotangent {ratio} is not finite")));
        }
        SplitAngle::new(f64::atan2(1.0, ratio))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The Klein threshold equivalent to this angle.
    #[inline]
    pub fn cot(self) -> f64 {
        self.0.cos() / self.0.sin()
    }
}

impl TryFrom<f64> for SplitAngle {
    type Error = GeometryError;

    fn try_from(theta: f64) -> Result<Self> {
        SplitAngle::new(theta)
    }
}

impl From<SplitAngle> for f64 {
    fn from(a: SplitAngle) -> f64 {
        a.0
    }
}

#[inline]
fn minkowski_inner_unchecked(u: &[f64], v: &[f64]) -> f64 {
    -u[0] * v[0] + dot(&u[1..], &v[1..])
}

/// `-u_0 v_0 + sum_{i>=1} u_i v_i`.
pub fn minkowski_inner(u: &[f64], v: &[f64]) -> Result<f64> {
    check_same_len(u, v)?;
    if u.len() < 2 {
        return Err(GeometryError::DimensionMismatch {
            expected: 2,
            found: u.len(),
        });
    }
    Ok(minkowski_inner_unchecked(u, v))
}

/// Geodesic distance on the hyperboloid, `arccosh(K <u,v>_M) / sqrt(-K)`.
///
/// Nearby points are evaluated through the chordal form
/// `2 asinh(sqrt(-K <u-v,u-v>_M) / 2)`, which is the same quantity without
/// the loss of precision of `arccosh` near 1.
pub fn lorentz_distance(u: &LorentzPoint, v: &LorentzPoint, k: Curvature) -> Result<f64> {
    let inner = minkowski_inner(u.coords(), v.coords())?;
    let arg = k.value() * inner;
    if arg.is_nan() || arg < 1.0 - ACOSH_CLAMP_TOL {
        return Err(GeometryError::Domain(format!("arccosh argument {arg} < 1")));
    }
    let scaled = if arg < 2.0 {
        let diff: Vec<f64> = u.coords().iter().zip(v.coords()).map(|(a, b)| a - b).collect();
        let chord_sq = minkowski_inner_unchecked(&diff, &diff).max(0.0);
        2.0 * ((-k.value() * chord_sq).sqrt() / 2.0).asinh()
    } else {
        arg.acosh()
    };
    Ok(scaled / k.sqrt_neg())
}

/// Gnomonic projection: `(u_1/u_0, ..., u_d/u_0)`.
pub fn lorentz_to_klein(u: &LorentzPoint) -> KleinPoint {
    let t = u.time();
    KleinPoint(u.spatial().iter().map(|x| x / t).collect())
}

/// Inverse gnomonic projection onto the hyperboloid of curvature `k`.
pub fn klein_to_lorentz(v: &KleinPoint, k: Curvature) -> LorentzPoint {
    let time = gamma_unchecked(norm_sq(v.coords()), k);
    let mut coords = Vec::with_capacity(v.dim() + 1);
    coords.push(time);
    coords.extend(v.coords().iter().map(|x| x * time));
    LorentzPoint(coords)
}

pub fn poincare_to_klein(p: &PoincarePoint, k: Curvature) -> KleinPoint {
    let scale = 2.0 * k.sqrt_neg() / (1.0 - k.value() * norm_sq(p.coords()));
    KleinPoint(p.coords().iter().map(|x| x * scale).collect())
}

pub fn klein_to_poincare(v: &KleinPoint, k: Curvature) -> PoincarePoint {
    let denom = k.sqrt_neg() * (1.0 + (1.0 - norm_sq(v.coords())).sqrt());
    PoincarePoint(v.coords().iter().map(|x| x / denom).collect())
}

/// Hyperbolic distance between Klein points, defined by lifting both to the
/// hyperboloid and taking [`lorentz_distance`].
pub fn klein_distance(u: &KleinPoint, v: &KleinPoint, k: Curvature) -> Result<f64> {
    check_same_len(u.coords(), v.coords())?;
    lorentz_distance(&klein_to_lorentz(u, k), &klein_to_lorentz(v, k), k)
}

/// Hilbert cross-ratio distance `1/2 ln(|ac||bd| / (|ab||cd|))`, where `a`
/// and `d` are the boundary points of the chord through `b` and `c`, in the
/// order `a, b, c, d`. Scaled by `1/sqrt(-K)`.
pub fn cross_ratio_distance(b: &KleinPoint, c: &KleinPoint, k: Curvature) -> Result<f64> {
    check_same_len(b.coords(), c.coords())?;
    let w: Vec<f64> = c.coords().iter().zip(b.coords()).map(|(c, b)| c - b).collect();
    let ww = norm_sq(&w);
    if ww == 0.0 {
        return Ok(0.0);
    }
    // b + s w meets the unit sphere where ww s^2 + 2 bw s + (|b|^2 - 1) = 0.
    let bw = dot(b.coords(), &w);
    let c0 = norm_sq(b.coords()) - 1.0;
    let disc = (bw * bw - ww * c0).max(0.0);
    let q = -(bw + bw.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 {
        let s = (-c0 / ww).sqrt();
        (-s, s)
    } else {
        (q / ww, c0 / q)
    };
    let (s_a, s_d) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    // Chord lengths are proportional to parameter differences; |w| cancels.
    let ac = 1.0 - s_a;
    let bd = s_d;
    let ab = -s_a;
    let cd = s_d - 1.0;
    if ab <= 0.0 || cd <= 0.0 {
        return Err(GeometryError::OutOfBall {
            norm_sq: norm_sq(b.coords()).max(norm_sq(c.coords())),
            limit: 1.0,
        });
    }
    Ok(0.5 * ((ac * bd) / (ab * cd)).ln() / k.sqrt_neg())
}

#[inline]
fn gamma_unchecked(norm_sq: f64, k: Curvature) -> f64 {
    1.0 / (-k.value() * (1.0 - norm_sq)).sqrt()
}

/// Lorentz factor of a Klein point: the timelike coordinate of its lift,
/// `1 / sqrt(-K (1 - |x|^2))`.
pub fn gamma(x: &[f64], k: Curvature) -> Result<f64> {
    KleinPoint::validate(x)?;
    Ok(gamma_unchecked(norm_sq(x), k))
}

/// [`gamma`] for a single Klein coordinate `t`.
pub fn gamma_scalar(t: f64, k: Curvature) -> Result<f64> {
    gamma(std::slice::from_ref(&t), k)
}

/// Geodesic midpoint in the Klein model, `(g_u u + g_v v) / (g_u + g_v)`.
pub fn einstein_midpoint(u: &KleinPoint, v: &KleinPoint, k: Curvature) -> Result<KleinPoint> {
    check_same_len(u.coords(), v.coords())?;
    let gu = gamma_unchecked(norm_sq(u.coords()), k);
    let gv = gamma_unchecked(norm_sq(v.coords()), k);
    let total = gu + gv;
    Ok(KleinPoint(
        u.coords()
            .iter()
            .zip(v.coords())
            .map(|(a, b)| (gu * a + gv * b) / total)
            .collect(),
    ))
}

/// Einstein midpoint of two Klein coordinates on one axis.
pub fn scalar_einstein_midpoint(l: f64, r: f64, k: Curvature) -> Result<f64> {
    let gl = gamma_scalar(l, k)?;
    let gr = gamma_scalar(r, k)?;
    Ok((gl * l + gr * r) / (gl + gr))
}

/// HyperDT's hyperbolic angular midpoint of two split angles.
///
/// With `alpha = sin(2a - 2b) / (2 sin(a + b) sin(b - a))` and
/// `beta = sign(a + b - pi)`, the midpoint is `arccot(beta sqrt(alpha^2 - 1) - alpha)`.
/// The two candidate cotangents are reciprocal, so whichever form avoids
/// cancellation is evaluated.
pub fn angular_midpoint(a: SplitAngle, b: SplitAngle) -> SplitAngle {
    let (t1, t2) = (a.value(), b.value());
    if t1 == t2 {
        return a;
    }
    let sum = t1 + t2;
    let beta = sum - std::f64::consts::PI;
    if beta == 0.0 {
        return SplitAngle(FRAC_PI_2);
    }
    let beta = beta.signum();
    let neg_alpha = -(2.0 * (t1 - t2)).sin() / (2.0 * sum.sin() * (t2 - t1).sin());
    let root = (neg_alpha * neg_alpha - 1.0).max(0.0).sqrt();
    let cot = if neg_alpha * beta >= 0.0 {
        neg_alpha + beta * root
    } else {
        1.0 / (neg_alpha - beta * root)
    };
    // atan2 keeps the result inside (0, pi) for every finite cotangent.
    SplitAngle(f64::atan2(1.0, cot))
}
