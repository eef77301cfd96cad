//! Shared fixtures and independent oracles for the integration tests.
//!
//! The step-level oracle here is a forward-mode directional derivative of
//! one transition, derived separately from the reverse-mode code in the
//! library; agreement of the two is what the adjoint identity checks mean.

#![allow(dead_code)] // shared across test targets; not every target uses everything

use ndarray::Array2;
use rand::rngs::StdRng;
use rand::Rng;

use phasereg::controls::{momenta_to_velocity, running_cost, MomentaField, NormPowers, NormalControl};
use phasereg::adjoint::endpoint_cost;
use phasereg::field_ops::{chi, mbp_g_prime, mbp_g_second, reaction_prime_grid};
use phasereg::forward::{evolve, SchemeParams};
use phasereg::grid::GridSpec;
use phasereg::kernels::KernelSet;
use phasereg::Grid;

/// Binary disc indicator sampled on the grid.
pub fn disc(grid: &GridSpec, cx: f64, cy: f64, radius: f64) -> Grid {
    Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
        let dx = grid.coord(i) - cx;
        let dy = grid.coord(j) - cy;
        if dx * dx + dy * dy <= radius * radius {
            1.0
        } else {
            0.0
        }
    })
}

/// Union of disc indicators.
pub fn discs(grid: &GridSpec, centers: &[(f64, f64)], radius: f64) -> Grid {
    let mut f = Grid::zeros((grid.n, grid.n));
    for &(cx, cy) in centers {
        f = f.mapv(|v| v) + &disc(grid, cx, cy, radius);
    }
    f.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 })
}

/// Smooth random grid: white noise smoothed by the RKHS kernel, scaled to
/// the requested amplitude.
pub fn smooth_random_grid(kernels: &KernelSet, scale: f64, rng: &mut StdRng) -> Grid {
    let n = kernels.grid().n;
    let noise = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
    let smoothed = kernels.rkhs_apply(&noise);
    let max = smoothed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    smoothed.mapv(|v| scale * v / max.max(1e-300))
}

/// Random smooth controls with the pinned zero slot.
pub fn smooth_random_controls(
    kernels: &KernelSet,
    u_scale: f64,
    m_scale: f64,
    rng: &mut StdRng,
) -> (NormalControl, MomentaField) {
    let n = kernels.grid().n;
    let slots = kernels.grid().control_slots();
    let mut u = vec![Grid::zeros((n, n))];
    let mut m1 = vec![Grid::zeros((n, n))];
    let mut m2 = vec![Grid::zeros((n, n))];
    for _ in 1..slots {
        u.push(smooth_random_grid(kernels, u_scale, rng));
        m1.push(smooth_random_grid(kernels, m_scale, rng));
        m2.push(smooth_random_grid(kernels, m_scale, rng));
    }
    (
        NormalControl::new(u).unwrap(),
        MomentaField::new(m1, m2).unwrap(),
    )
}

/// Perturbation of one step's inputs.
pub struct StepPerturbation {
    pub d_state: Grid,
    pub d_u: Grid,
    pub d_m1: Grid,
    pub d_m2: Grid,
}

/// Forward-mode directional derivative of one transition
/// `(F, u, m) -> F_next`, written independently of the library's
/// reverse-mode path.
pub fn step_jvp(
    state: &Grid,
    u: &Grid,
    m1: &Grid,
    m2: &Grid,
    pert: &StepPerturbation,
    kernels: &KernelSet,
    params: &SchemeParams,
) -> Grid {
    let dt = params.grid.dt;
    let f = kernels.smooth(state);
    let df = kernels.smooth(&pert.d_state);
    let gx = kernels.deriv_x1(&f);
    let gy = kernels.deriv_x2(&f);
    let dgx = kernels.deriv_x1(&df);
    let dgy = kernels.deriv_x2(&df);
    let mag = chi(&gx, &gy, &params.chi).unwrap();
    let dmag = (&gx * &dgx + &gy * &dgy) / &mag;

    let v1 = kernels.rkhs_apply(m1);
    let v2 = kernels.rkhs_apply(m2);
    let dv1 = kernels.rkhs_apply(&pert.d_m1);
    let dv2 = kernels.rkhs_apply(&pert.d_m2);

    let reaction = phasereg::field_ops::reaction_grid(&f, &params.reaction);
    let drift = u * &mag - &(&v1 * &gx) - &(&v2 * &gy) + &reaction;
    let d_drift = &pert.d_u * &mag + &(u * &dmag)
        - &(&dv1 * &gx)
        - &(&v1 * &dgx)
        - &(&dv2 * &gy)
        - &(&v2 * &dgy)
        + &(&reaction_prime_grid(&f, &params.reaction) * &df);

    let gp = mbp_g_prime(&f, &params.mbp).unwrap();
    let gpp = mbp_g_second(&f, &params.mbp).unwrap();
    let dy = &gp * &df + &(&(&gpp * &drift) * &df * dt) + &(&gp * &d_drift * dt);

    // F_next = g^{-1}(y): chain through (g^{-1})'(y) = 1 / g'(g^{-1}(y)),
    // written from the closed form so it degrades to zero at saturation.
    let y = phasereg::field_ops::mbp_g(&f, &params.mbp).unwrap() + &(&(&gp * &drift) * dt);
    let f_next = phasereg::field_ops::mbp_g_inv(&y, &params.mbp);
    let (a, mu) = (params.mbp.a, params.mbp.mu);
    let inv_gp = f_next.mapv(|x| (x + a) * (1.0 + a - x) / (mu * (1.0 + 2.0 * a)));
    dy * &inv_gp
}

/// Objective value through the public pipeline, used as the FD oracle.
#[allow(clippy::too_many_arguments)]
pub fn objective_value(
    initial: &Grid,
    u: &NormalControl,
    m: &MomentaField,
    target_end: &Grid,
    powers: &NormPowers,
    c_top: f64,
    c_end: f64,
    kernels: &KernelSet,
    params: &SchemeParams,
) -> f64 {
    let traj = evolve(initial, u, m, kernels, params).unwrap();
    running_cost(u, m, powers, c_top, &params.grid, kernels).unwrap()
        + endpoint_cost(
            traj.endpoint(),
            target_end,
            powers,
            c_end,
            &params.grid,
            kernels,
        )
        .unwrap()
}

/// Adds `h * direction` to a control pair.
pub fn perturb_controls(
    u: &NormalControl,
    m: &MomentaField,
    du: &[Grid],
    dm1: &[Grid],
    dm2: &[Grid],
    h: f64,
) -> (NormalControl, MomentaField) {
    let add = |base: &[Grid], d: &[Grid]| -> Vec<Grid> {
        base.iter()
            .zip(d)
            .map(|(b, dd)| b + &(dd * h))
            .collect()
    };
    (
        NormalControl::new(add(u.slices(), du)).unwrap(),
        MomentaField::new(add(m.component(1), dm1), add(m.component(2), dm2)).unwrap(),
    )
}

/// Velocity grids for every slot (convenience for decomposition checks).
pub fn velocities(m: &MomentaField, kernels: &KernelSet) -> Vec<(Grid, Grid)> {
    (0..m.slots())
        .map(|k| momenta_to_velocity(m, k, kernels).unwrap())
        .collect()
}

/// Flat inner product over a control-shaped triple.
pub fn triple_dot(
    a: (&[Grid], &[Grid], &[Grid]),
    b: (&[Grid], &[Grid], &[Grid]),
) -> f64 {
    let mut acc = 0.0;
    for (x, y) in [(a.0, b.0), (a.1, b.1), (a.2, b.2)] {
        for (gx, gy) in x.iter().zip(y) {
            acc += phasereg::conv::dot(gx, gy);
        }
    }
    acc
}
