//! Uniform grid over `[-L, L]^2` and the derived scheme parameters.

use crate::error::{Error, Result};

/// Geometry of the computation: `n` points per axis on `[-l, l]^2` and
/// `t_steps` time points on `[0, 1]`.
///
/// `n` must be odd so the grid contains the origin exactly; `dx = 2l/(n-1)`,
/// `dt = 1/(t_steps-1)` and `tau = sigma * sqrt(dt)` are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub l: f64,
    pub dx: f64,
    pub t_steps: usize,
    pub dt: f64,
    pub sigma: f64,
    pub tau: f64,
    /// Set when an even `n` was bumped to the next odd integer.
    pub n_requested: Option<usize>,
}

impl GridSpec {
    /// Builds the grid, rejecting even `n`.
    pub fn new(n: usize, l: f64, t_steps: usize, sigma: f64) -> Result<Self> {
        if n % 2 == 0 {
            return Err(Error::InvalidGrid(format!("n = {n} must be odd")));
        }
        Self::build(n, l, t_steps, sigma, None)
    }

    /// Builds the grid, bumping an even `n` to `n + 1` and recording the
    /// requested value.
    pub fn with_coercion(n: usize, l: f64, t_steps: usize, sigma: f64) -> Result<Self> {
        if n % 2 == 0 {
            Self::build(n + 1, l, t_steps, sigma, Some(n))
        } else {
            Self::build(n, l, t_steps, sigma, None)
        }
    }

    fn build(
        n: usize,
        l: f64,
        t_steps: usize,
        sigma: f64,
        n_requested: Option<usize>,
    ) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("n = {n} < 3")));
        }
        if !(l > 0.0) {
            return Err(Error::InvalidGrid(format!("l = {l} must be positive")));
        }
        if t_steps < 2 {
            return Err(Error::InvalidGrid(format!("t_steps = {t_steps} < 2")));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidGrid(format!("sigma = {sigma} must be positive")));
        }
        let dx = 2.0 * l / (n - 1) as f64;
        let dt = 1.0 / (t_steps - 1) as f64;
        Ok(Self {
            n,
            l,
            dx,
            t_steps,
            dt,
            sigma,
            tau: sigma * dt.sqrt(),
            n_requested,
        })
    }

    /// Coordinate of grid index `i` (0-based): `x_i = -l + dx * i`, computed
    /// as `dx * (i - center)` so the grid is exactly symmetric about the
    /// origin and `x_center = 0` bit-exactly.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.dx * (i as isize - self.center() as isize) as f64
    }

    /// Index of the origin, `(n - 1) / 2`.
    #[inline]
    pub fn center(&self) -> usize {
        (self.n - 1) / 2
    }

    /// Number of control slots (one per transition), including the pinned
    /// zero slot 0.
    #[inline]
    pub fn control_slots(&self) -> usize {
        self.t_steps - 1
    }
}
