//! Pointwise nonlinearities of the scheme.
//!
//! Three ingredients, all elementwise:
//!
//! - the reaction `I(xi) = W xi^2 (xi-1)^2 (xi-1/2)` on `[0, 1]`, zero
//!   outside; it vanishes at `0, 1/2, 1` and pushes values toward the wells
//!   `0` and `1`;
//! - the smoothed magnitude `chi(z) = sqrt(|z|^2 + psi^2)` standing in for
//!   `|grad f|`, with gradient `z / chi(z)` of magnitude at most one;
//! - the substitution map `g(x) = 1/2 + mu log((x+a)/(1+a-x))` on
//!   `(-a, 1+a)`, whose inverse maps the whole real line back into that
//!   interval. Conjugating an Euler step through `g` is what keeps the state
//!   inside `[-a, 1+a]` for arbitrary controls.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::Grid;

/// Reaction well depth `W >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionSpec {
    pub w: f64,
}

impl ReactionSpec {
    pub const DEFAULT_W: f64 = 100.0;

    pub fn new(w: f64) -> Result<Self> {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reaction well depth {w} must be nonnegative"
            )));
        }
        Ok(Self { w })
    }
}

impl Default for ReactionSpec {
    fn default() -> Self {
        Self { w: Self::DEFAULT_W }
    }
}

/// Parameters of the substitution map: range padding `a >= 0` and logit
/// gain `mu > 0`; the map's domain is `(-a, 1+a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbpMapSpec {
    pub a: f64,
    pub mu: f64,
}

impl MbpMapSpec {
    pub const DEFAULT_A: f64 = 0.01;
    pub const DEFAULT_MU: f64 = 0.05;
    /// Margin used when validating or clamping arguments of `g`.
    pub const DOMAIN_MARGIN: f64 = 1e-14;

    pub fn new(a: f64, mu: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "range padding a = {a} must be nonnegative"
            )));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "logit gain mu = {mu} must be positive"
            )));
        }
        Ok(Self { a, mu })
    }

    pub fn lower(&self) -> f64 {
        -self.a
    }

    pub fn upper(&self) -> f64 {
        1.0 + self.a
    }
}

impl Default for MbpMapSpec {
    fn default() -> Self {
        Self {
            a: Self::DEFAULT_A,
            mu: Self::DEFAULT_MU,
        }
    }
}

/// Smoothing floor of `chi`. The scheme default ties `psi^2` to the time
/// step, `psi^2 = dt * 1e-16`; a fixed floor is available as an override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSpec {
    pub psi: f64,
}

impl ChiSpec {
    pub const DEFAULT_EPS: f64 = 1e-16;

    /// `psi = sqrt(dt * 1e-16)`.
    pub fn from_grid(grid: &GridSpec) -> Self {
        Self {
            psi: (grid.dt * Self::DEFAULT_EPS).sqrt(),
        }
    }

    pub fn fixed(psi: f64) -> Result<Self> {
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "chi floor psi = {psi} must be positive"
            )));
        }
        Ok(Self { psi })
    }
}

/// `I(xi)`: the reaction polynomial with indicator support `[0, 1]`.
#[inline]
pub fn reaction(xi: f64, spec: &ReactionSpec) -> f64 {
    if !(0.0..=1.0).contains(&xi) {
        return 0.0;
    }
    let d = xi - 1.0;
    spec.w * xi * xi * d * d * (xi - 0.5)
}

/// `I'(xi)`; the one-sided values at 0 and 1 are 0, matching the interior
/// polynomial limit.
#[inline]
pub fn reaction_prime(xi: f64, spec: &ReactionSpec) -> f64 {
    if !(0.0..=1.0).contains(&xi) {
        return 0.0;
    }
    let d = xi - 1.0;
    spec.w * (2.0 * xi * d * d * (xi - 0.5) + 2.0 * xi * xi * d * (xi - 0.5) + xi * xi * d * d)
}

/// Elementwise lift of [`reaction`].
pub fn reaction_grid(f: &Grid, spec: &ReactionSpec) -> Grid {
    f.mapv(|xi| reaction(xi, spec))
}

/// Elementwise lift of [`reaction_prime`].
pub fn reaction_prime_grid(f: &Grid, spec: &ReactionSpec) -> Grid {
    f.mapv(|xi| reaction_prime(xi, spec))
}

/// `sqrt(gx^2 + gy^2 + psi^2)` elementwise.
pub fn chi(gx: &Grid, gy: &Grid, spec: &ChiSpec) -> Result<Grid> {
    if gx.dim() != gy.dim() {
        return Err(Error::ShapeMismatch {
            expected: gx.dim(),
            got: gy.dim(),
        });
    }
    let p2 = spec.psi * spec.psi;
    Ok(Array2::from_shape_fn(gx.raw_dim(), |idx| {
        (gx[idx] * gx[idx] + gy[idx] * gy[idx] + p2).sqrt()
    }))
}

/// Componentwise gradient of `chi`: `(gx, gy) / chi`, magnitude at most 1.
pub fn chi_grad(gx: &Grid, gy: &Grid, spec: &ChiSpec) -> Result<(Grid, Grid)> {
    let c = chi(gx, gy, spec)?;
    Ok((gx / &c, gy / &c))
}

#[inline]
fn g_scalar(x: f64, spec: &MbpMapSpec) -> f64 {
    0.5 + spec.mu * ((x + spec.a) / (1.0 + spec.a - x)).ln()
}

#[inline]
fn g_prime_scalar(x: f64, spec: &MbpMapSpec) -> f64 {
    spec.mu * (1.0 + 2.0 * spec.a) / ((x + spec.a) * (1.0 + spec.a - x))
}

#[inline]
fn g_second_scalar(x: f64, spec: &MbpMapSpec) -> f64 {
    let lo = x + spec.a;
    let hi = 1.0 + spec.a - x;
    spec.mu * (1.0 / (hi * hi) - 1.0 / (lo * lo))
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn g_inv_scalar(y: f64, spec: &MbpMapSpec) -> f64 {
    -spec.a + (1.0 + 2.0 * spec.a) * sigmoid((y - 0.5) / spec.mu)
}

fn validate_domain(x: &Grid, spec: &MbpMapSpec) -> Result<()> {
    let lo = spec.lower() + MbpMapSpec::DOMAIN_MARGIN;
    let hi = spec.upper() - MbpMapSpec::DOMAIN_MARGIN;
    for ((i, j), &v) in x.indexed_iter() {
        if !(v >= lo && v <= hi) {
            return Err(Error::DomainViolation {
                i,
                j,
                value: v,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// `g` applied elementwise; entries must lie in `[-a + 1e-14, 1+a - 1e-14]`.
pub fn mbp_g(x: &Grid, spec: &MbpMapSpec) -> Result<Grid> {
    validate_domain(x, spec)?;
    Ok(x.mapv(|v| g_scalar(v, spec)))
}

/// `g'` applied elementwise, same domain as [`mbp_g`].
pub fn mbp_g_prime(x: &Grid, spec: &MbpMapSpec) -> Result<Grid> {
    validate_domain(x, spec)?;
    Ok(x.mapv(|v| g_prime_scalar(v, spec)))
}

/// `g''` applied elementwise, same domain as [`mbp_g`]; the time step
/// multiplies `g'(f)` by the drift, so its derivative shows up in the
/// adjoint chain.
pub fn mbp_g_second(x: &Grid, spec: &MbpMapSpec) -> Result<Grid> {
    validate_domain(x, spec)?;
    Ok(x.mapv(|v| g_second_scalar(v, spec)))
}

/// `g^{-1}` applied elementwise; defined for any real input and takes values
/// in `(-a, 1+a)`.
pub fn mbp_g_inv(y: &Grid, spec: &MbpMapSpec) -> Grid {
    y.mapv(|v| g_inv_scalar(v, spec))
}

/// Grid values clamped into the usable domain of `g`.
pub(crate) fn clamp_to_g_domain(x: &Grid, spec: &MbpMapSpec) -> Grid {
    let lo = spec.lower() + MbpMapSpec::DOMAIN_MARGIN;
    let hi = spec.upper() - MbpMapSpec::DOMAIN_MARGIN;
    x.mapv(|v| v.clamp(lo, hi))
}

pub(crate) fn g_grid_unchecked(x: &Grid, spec: &MbpMapSpec) -> Grid {
    x.mapv(|v| g_scalar(v, spec))
}

pub(crate) fn g_prime_grid_unchecked(x: &Grid, spec: &MbpMapSpec) -> Grid {
    x.mapv(|v| g_prime_scalar(v, spec))
}

pub(crate) fn g_second_grid_unchecked(x: &Grid, spec: &MbpMapSpec) -> Grid {
    x.mapv(|v| g_second_scalar(v, spec))
}

/// `1 / g'` evaluated from the already-inverted value `x = g^{-1}(y)`;
/// vanishes at the range boundary instead of overflowing.
pub(crate) fn g_prime_reciprocal_at(x: &Grid, spec: &MbpMapSpec) -> Grid {
    let c = spec.mu * (1.0 + 2.0 * spec.a);
    x.mapv(|v| (v + spec.a) * (1.0 + spec.a - v) / c)
}
