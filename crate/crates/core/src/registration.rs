//! End-to-end registration driver.
//!
//! A problem holds two binary shapes and every parameter of the pipeline.
//! Solving one direction evolves the target under zero controls, minimizes
//! the objective over the stacked controls from a zero initial guess, and
//! reports the best objective value `rho`. Since the optimizer is local,
//! `rho` is an upper bound on the true minimum; a multi-start option reruns
//! from seeded perturbations and keeps the best result.
//!
//! The discrepancy between two shapes is the smaller of the two directional
//! values, `d_sigma = min(rho(a, b), rho(b, a))`: symmetric by construction
//! and zero (up to endpoint tolerance) for identical shapes. No triangle
//! inequality is claimed.
//!
//! The decomposition re-runs the evolution with each control family
//! switched off in turn and integrates grid particles through the optimized
//! velocity field; the advected indicator transported by that flow never
//! changes component count, which is how the diffeomorphic part is told
//! apart from the topological one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controls::{momenta_to_velocity, MomentaField, NormPowers, NormalControl};
use crate::error::{Error, Result};
use crate::field_ops::{ChiSpec, MbpMapSpec, ReactionSpec};
use crate::forward::{evolve, evolve_free, ingest_initial, SchemeParams};
use crate::grid::GridSpec;
use crate::kernels::{KernelSet, RadialKernelSpec};
use crate::optim::{
    minimize_from, ControlProblem, IterationRecord, OptimizationReport, OptimizerConfig,
};
use crate::Grid;

/// Threshold used for contours and component counting: the unstable
/// equilibrium of the reaction.
pub const INTERFACE_LEVEL: f64 = 0.5;

/// A full registration instance.
#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    pub f0: Grid,
    pub f_target: Grid,
    pub grid: GridSpec,
    pub powers: NormPowers,
    pub c_top: f64,
    pub c_end: f64,
    pub kappa: RadialKernelSpec,
    pub reaction: ReactionSpec,
    pub mbp: MbpMapSpec,
    /// Fixed chi floor; `None` ties `psi^2` to `dt * 1e-16`.
    pub chi_psi: Option<f64>,
    pub optimizer: OptimizerConfig,
    /// Accept grayscale inputs in `[0, 1]` instead of strict `{0, 1}`.
    pub soft_input: bool,
    /// Number of optimization starts; the first is the zero guess.
    pub multi_start: usize,
    pub seed: u64,
    /// `>= 2` runs the two discrepancy directions concurrently.
    pub threads: usize,
}

impl RegistrationProblem {
    pub fn new(f0: Grid, f_target: Grid, grid: GridSpec) -> Self {
        let kappa = RadialKernelSpec::default_for(&grid);
        Self {
            f0,
            f_target,
            grid,
            powers: NormPowers::default(),
            c_top: 1e8,
            c_end: 1e8,
            kappa,
            reaction: ReactionSpec::default(),
            mbp: MbpMapSpec::default(),
            chi_psi: None,
            optimizer: OptimizerConfig::default(),
            soft_input: false,
            multi_start: 1,
            seed: 0,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n;
        for (name, f) in [("initial", &self.f0), ("target", &self.f_target)] {
            if f.dim() != (n, n) {
                return Err(Error::InvalidParameter(format!(
                    "{name} shape {:?} does not match grid {n} x {n}",
                    f.dim()
                )));
            }
        }
        if !(self.c_end > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c_end = {} must be positive",
                self.c_end
            )));
        }
        if !(self.c_top >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c_top = {} must be nonnegative",
                self.c_top
            )));
        }
        if self.multi_start == 0 {
            return Err(Error::InvalidParameter("multi_start must be >= 1".into()));
        }
        self.optimizer.validate()
    }

    pub fn scheme_params(&self) -> SchemeParams {
        SchemeParams {
            grid: self.grid,
            reaction: self.reaction,
            mbp: self.mbp,
            chi: match self.chi_psi {
                Some(psi) => ChiSpec { psi },
                None => ChiSpec::from_grid(&self.grid),
            },
        }
    }
}

/// Result of one directional solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: OptimizationReport,
    /// Best objective value found; an upper bound on the true minimum.
    pub rho: f64,
}

/// Both directional solves and their minimum.
#[derive(Debug, Clone)]
pub struct DiscrepancyResult {
    pub rho_forward: f64,
    pub rho_backward: f64,
    pub d_sigma: f64,
    pub reports: (OptimizationReport, OptimizationReport),
}

fn perturbed_controls(
    n: usize,
    slots: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> (NormalControl, MomentaField) {
    let mut fill = || {
        let mut grids = vec![Grid::zeros((n, n))];
        for _ in 1..slots {
            grids.push(Grid::from_shape_fn((n, n), |_| {
                rng.gen_range(-scale..scale)
            }));
        }
        grids
    };
    let u = NormalControl::new(fill()).expect("slot 0 is zero by construction");
    let m = MomentaField::new(fill(), fill()).expect("slot 0 is zero by construction");
    (u, m)
}

/// Runs one directional registration; `swap` exchanges the roles of the two
/// shapes. The hook sees every accepted iteration of every start.
pub fn solve_with_hook(
    problem: &RegistrationProblem,
    swap: bool,
    hook: &mut dyn FnMut(IterationRecord) -> Result<()>,
) -> Result<SolveOutcome> {
    problem.validate()?;
    let params = problem.scheme_params();
    let kernels = KernelSet::new(&problem.grid, problem.kappa)?;
    let (from, to) = if swap {
        (&problem.f_target, &problem.f0)
    } else {
        (&problem.f0, &problem.f_target)
    };
    let initial = ingest_initial(from, &problem.mbp, problem.soft_input)?;
    let target_state = ingest_initial(to, &problem.mbp, problem.soft_input)?;
    let target_end = evolve_free(&target_state, &kernels, &params)?
        .endpoint()
        .clone();

    let control_problem = ControlProblem {
        kernels: &kernels,
        params: &params,
        powers: problem.powers,
        c_top: problem.c_top,
        c_end: problem.c_end,
        initial_state: initial,
        target_end,
    };

    let n = problem.grid.n;
    let slots = problem.grid.control_slots();
    let mut best: Option<OptimizationReport> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    for start in 0..problem.multi_start {
        let (u0, m0) = if start == 0 {
            (NormalControl::zeros(n, slots), MomentaField::zeros(n, slots))
        } else {
            perturbed_controls(n, slots, 1e-2, &mut rng)
        };
        let report = minimize_from(&control_problem, &u0, &m0, &problem.optimizer, hook)?;
        let better = match &best {
            Some(b) => report.final_objective.total < b.final_objective.total,
            None => true,
        };
        if better {
            best = Some(report);
        }
    }
    let report = best.expect("multi_start >= 1");
    let rho = report.final_objective.total;
    Ok(SolveOutcome { report, rho })
}

/// Registration of `f0` onto `f_target` with no iteration hook.
pub fn solve(problem: &RegistrationProblem) -> Result<SolveOutcome> {
    solve_with_hook(problem, false, &mut |_| Ok(()))
}

/// Runs both directions and takes the minimum. With `threads >= 2` the two
/// solves run concurrently; each direction is deterministic either way.
pub fn discrepancy(problem: &RegistrationProblem) -> Result<DiscrepancyResult> {
    problem.validate()?;
    let (fwd, bwd) = if problem.threads >= 2 {
        std::thread::scope(|scope| {
            let forward = scope.spawn(|| solve_with_hook(problem, false, &mut |_| Ok(())));
            let backward = scope.spawn(|| solve_with_hook(problem, true, &mut |_| Ok(())));
            (
                forward.join().expect("forward solve panicked"),
                backward.join().expect("backward solve panicked"),
            )
        })
    } else {
        (
            solve_with_hook(problem, false, &mut |_| Ok(())),
            solve_with_hook(problem, true, &mut |_| Ok(())),
        )
    };
    let fwd = fwd?;
    let bwd = bwd?;
    Ok(DiscrepancyResult {
        rho_forward: fwd.rho,
        rho_backward: bwd.rho,
        d_sigma: fwd.rho.min(bwd.rho),
        reports: (fwd.report, bwd.report),
    })
}

// ---------------------------------------------------------------------------
// Decomposition into diffeomorphic and topological parts
// ---------------------------------------------------------------------------

/// Particle flow and single-control endpoints extracted from an optimized
/// run.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Particle positions per time index (domain units), starting at the
    /// grid points.
    pub flow: Vec<(Grid, Grid)>,
    /// Endpoint of the evolution with the normal control switched off.
    pub v_only_endpoint: Grid,
    /// Endpoint of the evolution with the momenta switched off.
    pub u_only_endpoint: Grid,
    /// Initial indicator transported by the inverse flow of `v`.
    pub advected_indicator: Grid,
    /// Component labels of the initial indicator, for coloring particles.
    pub labels: ndarray::Array2<u32>,
}

/// Bilinear sample of a grid field at a domain point; zero outside the
/// domain.
pub fn bilinear_sample(field: &Grid, grid: &GridSpec, x: f64, y: f64) -> f64 {
    let n = grid.n;
    let fi = (x + grid.l) / grid.dx;
    let fj = (y + grid.l) / grid.dx;
    if fi < 0.0 || fj < 0.0 || fi > (n - 1) as f64 || fj > (n - 1) as f64 {
        return 0.0;
    }
    let i0 = (fi.floor() as usize).min(n - 2);
    let j0 = (fj.floor() as usize).min(n - 2);
    let ti = fi - i0 as f64;
    let tj = fj - j0 as f64;
    field[[i0, j0]] * (1.0 - ti) * (1.0 - tj)
        + field[[i0 + 1, j0]] * ti * (1.0 - tj)
        + field[[i0, j0 + 1]] * (1.0 - ti) * tj
        + field[[i0 + 1, j0 + 1]] * ti * tj
}

/// Euler integration of grid particles through per-step velocity grids.
pub fn integrate_flow(velocities: &[(Grid, Grid)], grid: &GridSpec) -> Vec<(Grid, Grid)> {
    let n = grid.n;
    let mut xs = Grid::from_shape_fn((n, n), |(i, _)| grid.coord(i));
    let mut ys = Grid::from_shape_fn((n, n), |(_, j)| grid.coord(j));
    let mut out = Vec::with_capacity(velocities.len() + 1);
    out.push((xs.clone(), ys.clone()));
    for (v1, v2) in velocities {
        let mut nxs = xs.clone();
        let mut nys = ys.clone();
        for idx in 0..n * n {
            let (i, j) = (idx / n, idx % n);
            let (px, py) = (xs[[i, j]], ys[[i, j]]);
            nxs[[i, j]] = px + grid.dt * bilinear_sample(v1, grid, px, py);
            nys[[i, j]] = py + grid.dt * bilinear_sample(v2, grid, px, py);
        }
        xs = nxs;
        ys = nys;
        out.push((xs.clone(), ys.clone()));
    }
    out
}

/// First-order inverse of the flow: integrates backwards from the endpoint.
pub fn integrate_inverse_flow(velocities: &[(Grid, Grid)], grid: &GridSpec) -> (Grid, Grid) {
    let n = grid.n;
    let mut xs = Grid::from_shape_fn((n, n), |(i, _)| grid.coord(i));
    let mut ys = Grid::from_shape_fn((n, n), |(_, j)| grid.coord(j));
    for (v1, v2) in velocities.iter().rev() {
        let mut nxs = xs.clone();
        let mut nys = ys.clone();
        for idx in 0..n * n {
            let (i, j) = (idx / n, idx % n);
            let (px, py) = (xs[[i, j]], ys[[i, j]]);
            nxs[[i, j]] = px - grid.dt * bilinear_sample(v1, grid, px, py);
            nys[[i, j]] = py - grid.dt * bilinear_sample(v2, grid, px, py);
        }
        xs = nxs;
        ys = nys;
    }
    (xs, ys)
}

/// Decomposes an optimized result into its diffeomorphic and topological
/// parts.
pub fn decompose(
    report: &OptimizationReport,
    problem: &RegistrationProblem,
) -> Result<Decomposition> {
    let params = problem.scheme_params();
    let kernels = KernelSet::new(&problem.grid, problem.kappa)?;
    let initial = ingest_initial(&problem.f0, &problem.mbp, problem.soft_input)?;
    let (u_opt, m_opt) = &report.final_controls;
    let n = problem.grid.n;
    let slots = problem.grid.control_slots();

    let velocities: Vec<(Grid, Grid)> = (0..slots)
        .map(|k| momenta_to_velocity(m_opt, k, &kernels))
        .collect::<Result<_>>()?;

    let flow = integrate_flow(&velocities, &problem.grid);

    let v_only = evolve(
        &initial,
        &NormalControl::zeros(n, slots),
        m_opt,
        &kernels,
        &params,
    )?;
    let u_only = evolve(
        &initial,
        u_opt,
        &MomentaField::zeros(n, slots),
        &kernels,
        &params,
    )?;

    let (ixs, iys) = integrate_inverse_flow(&velocities, &problem.grid);
    let advected_indicator = Grid::from_shape_fn((n, n), |(i, j)| {
        let v = bilinear_sample(&problem.f0, &problem.grid, ixs[[i, j]], iys[[i, j]]);
        if v > INTERFACE_LEVEL {
            1.0
        } else {
            0.0
        }
    });

    let (labels, _) = component_labels(&problem.f0, INTERFACE_LEVEL);
    Ok(Decomposition {
        flow,
        v_only_endpoint: v_only.endpoint().clone(),
        u_only_endpoint: u_only.endpoint().clone(),
        advected_indicator,
        labels,
    })
}

// ---------------------------------------------------------------------------
// Topology counting
// ---------------------------------------------------------------------------

/// Labels 4-connected components of `{field > threshold}`; background is 0.
pub fn component_labels(field: &Grid, threshold: f64) -> (ndarray::Array2<u32>, usize) {
    let (ni, nj) = field.dim();
    let mut labels = ndarray::Array2::<u32>::zeros((ni, nj));
    let mut next = 0u32;
    let mut stack = Vec::new();
    for si in 0..ni {
        for sj in 0..nj {
            if field[[si, sj]] <= threshold || labels[[si, sj]] != 0 {
                continue;
            }
            next += 1;
            labels[[si, sj]] = next;
            stack.push((si, sj));
            while let Some((i, j)) = stack.pop() {
                let mut visit = |a: usize, b: usize| {
                    if field[[a, b]] > threshold && labels[[a, b]] == 0 {
                        labels[[a, b]] = next;
                        stack.push((a, b));
                    }
                };
                if i > 0 {
                    visit(i - 1, j);
                }
                if i + 1 < ni {
                    visit(i + 1, j);
                }
                if j > 0 {
                    visit(i, j - 1);
                }
                if j + 1 < nj {
                    visit(i, j + 1);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Number of 4-connected components of `{field > threshold}`.
pub fn component_count(field: &Grid, threshold: f64) -> usize {
    component_labels(field, threshold).1
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Key-value run manifest; entries keep insertion order so reruns produce
/// byte-identical text.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Manifest seeded with every problem parameter.
pub fn problem_manifest(problem: &RegistrationProblem) -> Manifest {
    let mut m = Manifest::new();
    m.push("manifest_version", 1);
    m.push("metrics_csv_schema", 1);
    m.push("grid.n", problem.grid.n);
    if let Some(req) = problem.grid.n_requested {
        m.push("grid.n_requested", req);
    }
    m.push("grid.l", problem.grid.l);
    m.push("grid.t_steps", problem.grid.t_steps);
    m.push("grid.dx", problem.grid.dx);
    m.push("grid.dt", problem.grid.dt);
    m.push("grid.sigma", problem.grid.sigma);
    m.push("grid.tau", problem.grid.tau);
    m.push("powers.p", problem.powers.p());
    m.push("powers.r", problem.powers.r());
    m.push("powers.rstar", problem.powers.rstar());
    m.push("cost.c_top", problem.c_top);
    m.push("cost.c_end", problem.c_end);
    m.push("reaction.w", problem.reaction.w);
    m.push("mbp.a", problem.mbp.a);
    m.push("mbp.mu", problem.mbp.mu);
    let chi = match problem.chi_psi {
        Some(psi) => psi,
        None => ChiSpec::from_grid(&problem.grid).psi,
    };
    m.push("chi.psi", chi);
    match problem.kappa {
        RadialKernelSpec::Gaussian { width } => {
            m.push("kernel.kind", "gaussian");
            m.push("kernel.width", width);
        }
    }
    m.push("optimizer.memory", problem.optimizer.memory);
    m.push("optimizer.max_iters", problem.optimizer.max_iters);
    m.push("optimizer.grad_tol", problem.optimizer.grad_tol);
    m.push("optimizer.wolfe_c1", problem.optimizer.wolfe_c1);
    m.push("optimizer.wolfe_c2", problem.optimizer.wolfe_c2);
    m.push("optimizer.max_line_search", problem.optimizer.max_line_search);
    m.push("optimizer.precondition_u", problem.optimizer.precondition_u);
    m.push("multi_start", problem.multi_start);
    m.push("seed", problem.seed);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    pub(crate) fn disc(grid: &GridSpec, cx: f64, cy: f64, radius: f64) -> Grid {
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

    #[test]
    fn component_count_basics() {
        let zeros = Grid::zeros((8, 8));
        assert_eq!(component_count(&zeros, 0.5), 0);

        let grid = GridSpec::new(33, 1.0, 3, 0.1).unwrap();
        let one = disc(&grid, 0.0, 0.0, 0.3);
        assert_eq!(component_count(&one, 0.5), 1);

        let two = &disc(&grid, -0.5, 0.0, 0.2) + &disc(&grid, 0.5, 0.0, 0.2);
        assert_eq!(component_count(&two, 0.5), 2);
    }

    #[test]
    fn pinched_neck_splits_components() {
        // A dumbbell connected by a one-cell bridge: 1 component before the
        // bridge is removed, 2 after.
        let grid = GridSpec::new(21, 1.0, 3, 0.1).unwrap();
        let mut f = &disc(&grid, -0.5, 0.0, 0.25) + &disc(&grid, 0.5, 0.0, 0.25);
        let c = grid.center();
        for i in 0..grid.n {
            if (grid.coord(i)).abs() <= 0.5 {
                f[[i, c]] = 1.0;
            }
        }
        assert_eq!(component_count(&f, 0.5), 1);
        f[[c, c]] = 0.0;
        assert_eq!(component_count(&f, 0.5), 2);
    }

    #[test]
    fn identity_flow_for_zero_velocity() {
        let grid = GridSpec::new(9, 1.0, 4, 0.2).unwrap();
        let vels = vec![(Grid::zeros((9, 9)), Grid::zeros((9, 9))); 3];
        let flow = integrate_flow(&vels, &grid);
        assert_eq!(flow.len(), 4);
        let (xs, ys) = flow.last().unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(xs[[i, j]], grid.coord(i));
                assert_eq!(ys[[i, j]], grid.coord(j));
            }
        }
    }

    #[test]
    fn constant_velocity_translates_particles() {
        let grid = GridSpec::new(17, 1.0, 6, 0.2).unwrap();
        let c = 0.3;
        let vels =
            vec![(Grid::from_elem((17, 17), c), Grid::zeros((17, 17))); grid.control_slots()];
        let flow = integrate_flow(&vels, &grid);
        let (xs, _) = flow.last().unwrap();
        // Particles that stay inside the domain move by c * (T-1) * dt = c.
        let i = 4;
        let j = grid.center();
        let expected = grid.coord(i) + c;
        assert!((xs[[i, j]] - expected).abs() < 1e-12);
    }

    #[test]
    fn inverse_flow_undoes_translation() {
        let grid = GridSpec::new(17, 1.0, 6, 0.2).unwrap();
        let c = 0.2;
        let vels =
            vec![(Grid::from_elem((17, 17), c), Grid::zeros((17, 17))); grid.control_slots()];
        let (xs, ys) = integrate_inverse_flow(&vels, &grid);
        let (i, j) = (10, grid.center());
        assert!((xs[[i, j]] - (grid.coord(i) - c)).abs() < 1e-12);
        assert!((ys[[i, j]] - grid.coord(j)).abs() < 1e-12);
    }

    #[test]
    fn bilinear_sampling() {
        let grid = GridSpec::new(3, 1.0, 3, 0.2).unwrap();
        let f = Array2::from_shape_fn((3, 3), |(i, _)| grid.coord(i));
        assert!((bilinear_sample(&f, &grid, 0.5, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(bilinear_sample(&f, &grid, 1.5, 0.0), 0.0);
        assert_eq!(bilinear_sample(&f, &grid, 0.0, -1.5), 0.0);
    }

    #[test]
    fn manifest_is_deterministic_text() {
        let grid = GridSpec::new(9, 1.0, 3, 0.1).unwrap();
        let p = RegistrationProblem::new(disc(&grid, 0.0, 0.0, 0.3), disc(&grid, 0.0, 0.0, 0.3), grid);
        let a = problem_manifest(&p).to_text();
        let b = problem_manifest(&p).to_text();
        assert_eq!(a, b);
        assert!(a.contains("grid.n = 9\n"));
        assert!(a.contains("cost.c_top = 100000000\n"));
    }

    #[test]
    fn validation_catches_shape_and_sign_errors() {
        let grid = GridSpec::new(9, 1.0, 3, 0.1).unwrap();
        let good = disc(&grid, 0.0, 0.0, 0.3);
        let mut p = RegistrationProblem::new(good.clone(), Grid::zeros((8, 8)), grid);
        assert!(p.validate().is_err());
        p.f_target = good;
        assert!(p.validate().is_ok());
        p.c_end = 0.0;
        assert!(p.validate().is_err());
    }
}
