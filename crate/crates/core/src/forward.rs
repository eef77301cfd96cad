//! Discrete-time state evolution with a structurally enforced range bound.
//!
//! States come in two flavors: the stored grid `F(k)` and its smoothed read
//! `f(k) = M * F(k)`. One transition is
//!
//! ```text
//! V(k)   = u(k) . chi(DM*f, DM^T*f) - v1(k) . (DM*f) - v2(k) . (DM^T*f) + I(f)
//! F(k+1) = g^{-1}( g(f(k)) + dt g'(f(k)) . V(k) )
//! ```
//!
//! (`.` elementwise). The conjugation through `g` agrees with a forward
//! Euler step to first order in `dt` while keeping every entry of `F(k+1)`
//! inside `(-a, 1+a)` regardless of the controls. With all controls zero and
//! `W = 0` the map collapses to plain heat-kernel smoothing.
//!
//! Time layout: `t_steps` states `F(0..T-1)` on `[0, 1]`, `T-1` transitions,
//! and one control slot per transition with slot 0 pinned to zero (the first
//! transition is control-free).

use crate::controls::{momenta_to_velocity, MomentaField, NormalControl};
use crate::error::{Error, Result};
use crate::field_ops::{
    chi, clamp_to_g_domain, g_grid_unchecked, g_prime_grid_unchecked, mbp_g_inv, reaction_grid,
    ChiSpec, MbpMapSpec, ReactionSpec,
};
use crate::grid::GridSpec;
use crate::kernels::KernelSet;
use crate::Grid;

/// Everything a time step needs besides the kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub grid: GridSpec,
    pub reaction: ReactionSpec,
    pub mbp: MbpMapSpec,
    pub chi: ChiSpec,
}

impl SchemeParams {
    /// Default reaction/map parameters with the scheme-tied chi floor.
    pub fn defaults_for(grid: GridSpec) -> Self {
        Self {
            grid,
            reaction: ReactionSpec::default(),
            mbp: MbpMapSpec::default(),
            chi: ChiSpec::from_grid(&grid),
        }
    }
}

/// Forward sweep output: states, their smoothed reads, and the drift terms,
/// cached for the adjoint sweep.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `F(0..T-1)`; every entry lies in `[-a, 1+a]`.
    pub states: Vec<Grid>,
    /// `f(k) = M * F(k)` for every stored state.
    pub smoothed: Vec<Grid>,
    /// `V(0..T-2)`.
    pub drifts: Vec<Grid>,
    pub grid: GridSpec,
}

impl Trajectory {
    /// Smoothed endpoint `f(T-1)`, the field entering the endpoint cost.
    pub fn endpoint(&self) -> &Grid {
        self.smoothed.last().expect("trajectory is never empty")
    }
}

/// Turns a binary image into the initial state, clamped into the usable
/// domain of `g`. Strict mode requires entries in `{0, 1}`; soft mode
/// accepts `[0, 1]`.
pub fn ingest_initial(image: &Grid, mbp: &MbpMapSpec, soft: bool) -> Result<Grid> {
    for ((i, j), &v) in image.indexed_iter() {
        let ok = if soft {
            (0.0..=1.0).contains(&v)
        } else {
            v == 0.0 || v == 1.0
        };
        if !ok {
            return Err(Error::NonBinaryInput { i, j, value: v });
        }
    }
    Ok(clamp_to_g_domain(image, mbp))
}

/// The drift `V(k)` for an already-smoothed state `f(k)`.
pub fn drift(
    f: &Grid,
    u_k: &Grid,
    v_k: (&Grid, &Grid),
    kernels: &KernelSet,
    params: &SchemeParams,
) -> Result<Grid> {
    let n = kernels.grid().n;
    for g in [f, u_k, v_k.0, v_k.1] {
        if g.dim() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: (n, n),
                got: g.dim(),
            });
        }
    }
    let gx = kernels.deriv_x1(f);
    let gy = kernels.deriv_x2(f);
    let mag = chi(&gx, &gy, &params.chi)?;
    let mut v = reaction_grid(f, &params.reaction);
    v += &(u_k * &mag);
    v -= &(v_k.0 * &gx);
    v -= &(v_k.1 * &gy);
    Ok(v)
}

/// One transition from the stored state, with the velocity grids given
/// explicitly. Returns `(F(k+1), f(k), V(k))`.
pub fn step_with_velocity(
    state: &Grid,
    u_k: &Grid,
    v_k: (&Grid, &Grid),
    kernels: &KernelSet,
    params: &SchemeParams,
) -> Result<(Grid, Grid, Grid)> {
    let f = kernels.smooth(state);
    let v = drift(&f, u_k, v_k, kernels, params)?;
    let fc = clamp_to_g_domain(&f, &params.mbp);
    let mut y = g_prime_grid_unchecked(&fc, &params.mbp);
    y *= &v;
    y *= params.grid.dt;
    y += &g_grid_unchecked(&fc, &params.mbp);
    let next = mbp_g_inv(&y, &params.mbp);
    Ok((next, f, v))
}

/// One transition driven by a momenta slot.
pub fn step(
    state: &Grid,
    u_k: &Grid,
    m: &MomentaField,
    k: usize,
    kernels: &KernelSet,
    params: &SchemeParams,
) -> Result<(Grid, Grid, Grid)> {
    let (v1, v2) = momenta_to_velocity(m, k, kernels)?;
    step_with_velocity(state, u_k, (&v1, &v2), kernels, params)
}

/// Runs the full evolution from an ingested initial state.
pub fn evolve(
    initial: &Grid,
    u: &NormalControl,
    m: &MomentaField,
    kernels: &KernelSet,
    params: &SchemeParams,
) -> Result<Trajectory> {
    let grid = params.grid;
    let slots = grid.control_slots();
    if u.slots() != slots {
        return Err(Error::BadControlLength {
            expected: slots,
            got: u.slots(),
        });
    }
    if m.slots() != slots {
        return Err(Error::BadControlLength {
            expected: slots,
            got: m.slots(),
        });
    }
    let mut states = Vec::with_capacity(grid.t_steps);
    let mut smoothed = Vec::with_capacity(grid.t_steps);
    let mut drifts = Vec::with_capacity(slots);
    states.push(initial.clone());
    for k in 0..slots {
        let (next, f_k, v_k) = step(&states[k], u.slot(k), m, k, kernels, params)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        smoothed.push(f_k);
        drifts.push(v_k);
        states.push(next);
    }
    smoothed.push(kernels.smooth(&states[slots]));
    Ok(Trajectory {
        states,
        smoothed,
        drifts,
        grid,
    })
}

/// Evolution under zero controls (the free flow a target undergoes).
pub fn evolve_free(initial: &Grid, kernels: &KernelSet, params: &SchemeParams) -> Result<Trajectory> {
    let n = params.grid.n;
    let slots = params.grid.control_slots();
    evolve(
        initial,
        &NormalControl::zeros(n, slots),
        &MomentaField::zeros(n, slots),
        kernels,
        params,
    )
}

/// Distance (in domain units) from the superlevel set `{field > level}` to
/// the boundary of `[-L, L]^2`; used to warn about support too close to the
/// zero-padded edge.
pub fn support_distance_to_boundary(field: &Grid, grid: &GridSpec, level: f64) -> f64 {
    let mut dist = f64::INFINITY;
    for ((i, j), &v) in field.indexed_iter() {
        if v > level {
            let dxb = (grid.l - grid.coord(i).abs()).min(grid.l - grid.coord(j).abs());
            dist = dist.min(dxb);
        }
    }
    dist
}
