//! Control families and their norms.
//!
//! Two controls drive the evolution: a scalar per-cell normal velocity `u`
//! (a simple function, one coefficient grid per time step) and RKHS momenta
//! `m = (m1, m2)` whose kernel smoothing yields the advecting field
//! `v = (Ktilde * m1, Ktilde * m2)`.
//!
//! Both containers hold one `N x N` grid per transition; slot 0 is pinned to
//! zero, so the first transition is control-free. The control costs are
//!
//! ```text
//! ||u||_U^p       = dt * sum_k ( dx^2 sum_ij |u^k_ij|^r )^(p/r)
//! velocity cost   = dt * sum_k ( sum_n <m_n^k, Ktilde * m_n^k> )^(p/2)
//! ```
//!
//! with `p > 2` and `r > 2p/(p-2)` (the planar admissibility range).

use crate::conv::dot;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::KernelSet;
use crate::Grid;

/// Exponent pair for the control norms, with `rstar = r/(r-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormPowers {
    p: f64,
    r: f64,
    rstar: f64,
}

impl NormPowers {
    pub const DEFAULT_P: f64 = 4.0;
    pub const DEFAULT_R: f64 = 6.0;

    /// Requires `p > 2` and `r > 2p/(p-2)` (dimension 2).
    pub fn new(p: f64, r: f64) -> Result<Self> {
        if !(p > 2.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time exponent p = {p} must satisfy p > 2"
            )));
        }
        let bound = 2.0 * p / (p - 2.0);
        if !(r > bound && r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "space exponent r = {r} must satisfy r > 2p/(p-2) = {bound}"
            )));
        }
        Ok(Self {
            p,
            r,
            rstar: r / (r - 1.0),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn rstar(&self) -> f64 {
        self.rstar
    }
}

impl Default for NormPowers {
    fn default() -> Self {
        Self::new(Self::DEFAULT_P, Self::DEFAULT_R).unwrap()
    }
}

fn validate_slots(slots: &[Grid], what: &str) -> Result<()> {
    if slots.is_empty() {
        return Err(Error::InvalidParameter(format!("{what}: no time slots")));
    }
    let dim = slots[0].dim();
    if dim.0 != dim.1 {
        return Err(Error::ShapeMismatch {
            expected: (dim.0, dim.0),
            got: dim,
        });
    }
    for (k, s) in slots.iter().enumerate() {
        if s.dim() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: s.dim(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{what}: non-finite entry in slot {k}"
            )));
        }
    }
    if slots[0].iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{what}: time slot 0 must be identically zero"
        )));
    }
    Ok(())
}

/// Simple-function normal control: one coefficient grid per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalControl {
    coeffs: Vec<Grid>,
}

impl NormalControl {
    pub fn new(coeffs: Vec<Grid>) -> Result<Self> {
        validate_slots(&coeffs, "normal control")?;
        Ok(Self { coeffs })
    }

    pub fn zeros(n: usize, slots: usize) -> Self {
        Self {
            coeffs: (0..slots).map(|_| Grid::zeros((n, n))).collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.coeffs.len()
    }

    pub fn n(&self) -> usize {
        self.coeffs[0].dim().0
    }

    pub fn slot(&self, k: usize) -> &Grid {
        &self.coeffs[k]
    }

    pub fn slices(&self) -> &[Grid] {
        &self.coeffs
    }
}

/// RKHS momenta: two grids per transition, one per velocity component.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentaField {
    m1: Vec<Grid>,
    m2: Vec<Grid>,
}

impl MomentaField {
    pub fn new(m1: Vec<Grid>, m2: Vec<Grid>) -> Result<Self> {
        if m1.len() != m2.len() {
            return Err(Error::BadControlLength {
                expected: m1.len(),
                got: m2.len(),
            });
        }
        validate_slots(&m1, "momenta component 1")?;
        validate_slots(&m2, "momenta component 2")?;
        if m1[0].dim() != m2[0].dim() {
            return Err(Error::ShapeMismatch {
                expected: m1[0].dim(),
                got: m2[0].dim(),
            });
        }
        Ok(Self { m1, m2 })
    }

    pub fn zeros(n: usize, slots: usize) -> Self {
        Self {
            m1: (0..slots).map(|_| Grid::zeros((n, n))).collect(),
            m2: (0..slots).map(|_| Grid::zeros((n, n))).collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.m1.len()
    }

    pub fn n(&self) -> usize {
        self.m1[0].dim().0
    }

    pub fn slot(&self, k: usize) -> (&Grid, &Grid) {
        (&self.m1[k], &self.m2[k])
    }

    pub fn component(&self, n: usize) -> &[Grid] {
        match n {
            1 => &self.m1,
            2 => &self.m2,
            _ => panic!("momenta component must be 1 or 2"),
        }
    }
}

/// `dx^2 sum_ij |u|^r` for one time slot.
pub(crate) fn slot_power_sum(slice: &Grid, r: f64, grid: &GridSpec) -> f64 {
    let mut acc = 0.0;
    for &v in slice.iter() {
        acc += v.abs().powf(r);
    }
    grid.dx * grid.dx * acc
}

/// `||u||_U^p = dt sum_k (dx^2 sum_ij |u^k_ij|^r)^(p/r)`.
pub fn u_norm_p(u: &NormalControl, powers: &NormPowers, grid: &GridSpec) -> f64 {
    let mut acc = 0.0;
    for slice in u.slices() {
        acc += slot_power_sum(slice, powers.r(), grid).powf(powers.p() / powers.r());
    }
    grid.dt * acc
}

/// Velocity components `(Ktilde * m1^k, Ktilde * m2^k)` at time slot `k`.
pub fn momenta_to_velocity(m: &MomentaField, k: usize, kernels: &KernelSet) -> Result<(Grid, Grid)> {
    if k >= m.slots() {
        return Err(Error::TimeIndexOutOfRange { k, len: m.slots() });
    }
    let (m1, m2) = m.slot(k);
    Ok((kernels.rkhs_apply(m1), kernels.rkhs_apply(m2)))
}

/// `||v_k||_V^2 = sum_n <m_n^k, Ktilde * m_n^k>`, nonnegative for a
/// positive-definite kernel.
pub fn v_norm_sq(m: &MomentaField, k: usize, kernels: &KernelSet) -> Result<f64> {
    let (v1, v2) = momenta_to_velocity(m, k, kernels)?;
    let (m1, m2) = m.slot(k);
    Ok(dot(m1, &v1) + dot(m2, &v2))
}

pub(crate) fn v_norm_sq_from_velocity(m: &MomentaField, k: usize, v: &(Grid, Grid)) -> f64 {
    let (m1, m2) = m.slot(k);
    dot(m1, &v.0) + dot(m2, &v.1)
}

/// Negative quadratic-form values below this threshold indicate a kernel
/// that is not positive definite.
pub const PD_TOLERANCE: f64 = -1e-10;

/// `C_top ||u||_U^p + dt sum_k ||v_k||^p`, the running part of the objective.
pub fn running_cost(
    u: &NormalControl,
    m: &MomentaField,
    powers: &NormPowers,
    c_top: f64,
    grid: &GridSpec,
    kernels: &KernelSet,
) -> Result<f64> {
    let mut v_cost = 0.0;
    for k in 0..m.slots() {
        let q = v_norm_sq(m, k, kernels)?;
        if q < PD_TOLERANCE {
            return Err(Error::KernelNotPositiveDefinite { k, value: q });
        }
        v_cost += q.max(0.0).powf(powers.p() / 2.0);
    }
    Ok(c_top * u_norm_p(u, powers, grid) + grid.dt * v_cost)
}
