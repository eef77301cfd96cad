//! Limited-memory quasi-Newton descent over the stacked control vector.
//!
//! The variable is the flat vector `[u slices | m1 slices | m2 slices]`,
//! time-major, slot 0 of each container included but pinned: those
//! coordinates start at zero and their gradient entries are projected to
//! zero, so they never move. Search directions come from the standard
//! two-loop recursion; steps satisfy the strong Wolfe conditions, so the
//! accepted objective trace is strictly decreasing. Curvature pairs with
//! `<s, y> <= 0` are skipped to keep the implicit Hessian approximation
//! positive definite.
//!
//! Convergence is declared on the gradient norm relative to its initial
//! value. The full optimizer state can be checkpointed and resumed; a resume
//! replays the remaining iterations bit-identically under the same build.

use std::collections::VecDeque;
use std::io::{Read, Write};

use crate::adjoint::{gradient, GradientPair, ObjectiveBreakdown};
use crate::controls::{MomentaField, NormPowers, NormalControl};
use crate::error::{Error, Result};
use crate::forward::{evolve, SchemeParams, Trajectory};
use crate::io::{read_f64, read_u64, write_f64, write_u64, ContainerHeader};
use crate::kernels::KernelSet;
use crate::Grid;

/// Tuning knobs of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// History pairs kept by the two-loop recursion.
    pub memory: usize,
    pub max_iters: usize,
    /// Relative gradient-norm tolerance.
    pub grad_tol: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search: usize,
    /// Diagonal rescale of the `u` block by `1/C_top` in the initial inverse
    /// Hessian; off by default.
    pub precondition_u: bool,
    /// Explicit diagonal factor for the `u` block of the initial inverse
    /// Hessian, overriding the `1/C_top` choice. The kernel smoothing makes
    /// the momenta curvature larger than the normal control's by roughly the
    /// squared kernel mass, so factors well above 1 let `u` participate.
    pub u_block_scale: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 300,
            grad_tol: 1e-6,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search: 25,
            precondition_u: false,
            u_block_scale: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidParameter("memory must be >= 1".into()));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "needs 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.max_line_search == 0 {
            return Err(Error::InvalidParameter("max_line_search must be >= 1".into()));
        }
        Ok(())
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
    LineSearchFailure,
}

/// Outcome of one optimization run.
#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterations: usize,
    pub e_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub termination: Termination,
    pub final_controls: (NormalControl, MomentaField),
    pub final_objective: ObjectiveBreakdown,
}

fn vnorm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full optimizer state; everything a bit-identical resume needs.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    pub x: Vec<f64>,
    pub e: f64,
    pub grad: Vec<f64>,
    pub iter: usize,
    pub initial_grad_norm: f64,
    pub e_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    /// `(s, y, 1/<s,y>)` pairs, oldest first.
    pub history: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsState {
    pub fn init(x: Vec<f64>, e: f64, grad: Vec<f64>) -> Self {
        let g0 = vnorm(&grad);
        Self {
            x,
            e,
            grad,
            iter: 0,
            initial_grad_norm: g0,
            e_trace: vec![e],
            grad_norm_trace: vec![g0],
            history: VecDeque::new(),
        }
    }
}

/// Two-loop recursion for the search direction `-H g`, with an optional
/// diagonal factor on the leading `u_len` coordinates of the initial `H0`.
fn two_loop(
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    grad: &[f64],
    u_scale: Option<(usize, f64)>,
) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * vdot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let gamma = history
        .back()
        .map(|(s, y, _)| {
            let yy = vdot(y, y);
            if yy > 0.0 {
                vdot(s, y) / yy
            } else {
                1.0
            }
        })
        .unwrap_or(1.0);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    if let Some((u_len, scale)) = u_scale {
        for qi in q.iter_mut().take(u_len) {
            *qi *= scale;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * vdot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// One objective evaluation: value and gradient at `x`.
pub type EvalFn<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

struct LineSearchResult {
    alpha: f64,
    e: f64,
    grad: Vec<f64>,
    x: Vec<f64>,
}

fn eval_at(
    obj: &mut EvalFn,
    x0: &[f64],
    dir: &[f64],
    alpha: f64,
) -> Result<(Vec<f64>, f64, Vec<f64>, f64)> {
    let x: Vec<f64> = x0.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
    let (e, g) = obj(&x)?;
    if !e.is_finite() {
        return Err(Error::OptimizerAbort {
            iter: 0,
            reason: format!("non-finite objective at trial step {alpha}"),
        });
    }
    let dphi = vdot(&g, dir);
    Ok((x, e, g, dphi))
}

fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    // Minimizer of the cubic interpolant; falls back to bisection when the
    // model degenerates.
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc >= 0.0 {
        let d2 = disc.sqrt() * (b - a).signum();
        let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if t.is_finite() {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let margin = 0.1 * (hi - lo);
            return t.clamp(lo + margin, hi - margin);
        }
    }
    0.5 * (a + b)
}

/// Strong Wolfe line search (bracket and zoom with cubic interpolation).
///
/// Requires a descent direction. On success the accepted point was the most
/// recent evaluation, so callers may reuse cached per-evaluation data.
pub fn line_search(
    obj: &mut EvalFn,
    x0: &[f64],
    e0: f64,
    dir: &[f64],
    dphi0: f64,
    alpha0: f64,
    cfg: &OptimizerConfig,
) -> Result<LineSearchOutcome> {
    if !(dphi0 < 0.0) {
        return Err(Error::NotDescentDirection { gtd: dphi0 });
    }
    let c1 = cfg.wolfe_c1;
    let c2 = cfg.wolfe_c2;
    let mut evals = 0usize;
    let budget = cfg.max_line_search;

    let mut alpha_prev = 0.0;
    let mut phi_prev = e0;
    let mut dphi_prev = dphi0;
    let mut alpha = alpha0.max(f64::MIN_POSITIVE);

    let mut bracket: Option<(f64, f64, f64, f64, f64, f64)> = None;
    let mut accepted: Option<LineSearchResult> = None;

    while evals < budget {
        let (x, phi, g, dphi) = eval_at(obj, x0, dir, alpha)?;
        evals += 1;
        if phi > e0 + c1 * alpha * dphi0 || (evals > 1 && phi >= phi_prev) {
            bracket = Some((alpha_prev, phi_prev, dphi_prev, alpha, phi, dphi));
            break;
        }
        if dphi.abs() <= -c2 * dphi0 {
            accepted = Some(LineSearchResult {
                alpha,
                e: phi,
                grad: g,
                x,
            });
            break;
        }
        if dphi >= 0.0 {
            bracket = Some((alpha, phi, dphi, alpha_prev, phi_prev, dphi_prev));
            break;
        }
        alpha_prev = alpha;
        phi_prev = phi;
        dphi_prev = dphi;
        alpha *= 2.0;
    }

    // Zoom phase: lo always holds the lowest value seen.
    if accepted.is_none() {
        if let Some((mut lo, mut flo, mut dlo, mut hi, mut fhi, mut dhi)) = bracket {
            while evals < budget {
                let trial = cubic_min(lo, flo, dlo, hi, fhi, dhi);
                let (x, phi, g, dphi) = eval_at(obj, x0, dir, trial)?;
                evals += 1;
                if phi > e0 + c1 * trial * dphi0 || phi >= flo {
                    hi = trial;
                    fhi = phi;
                    dhi = dphi;
                } else {
                    if dphi.abs() <= -c2 * dphi0 {
                        accepted = Some(LineSearchResult {
                            alpha: trial,
                            e: phi,
                            grad: g,
                            x,
                        });
                        break;
                    }
                    if dphi * (hi - lo) >= 0.0 {
                        hi = lo;
                        fhi = flo;
                        dhi = dlo;
                    }
                    lo = trial;
                    flo = phi;
                    dlo = dphi;
                }
                if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
                    break;
                }
            }
        }
    }

    match accepted {
        Some(r) => Ok(LineSearchOutcome {
            step: r.alpha,
            e: r.e,
            grad: r.grad,
            x: r.x,
            evals,
        }),
        None => Err(Error::LineSearchFailure { trials: evals }),
    }
}

/// Accepted line-search point.
pub struct LineSearchOutcome {
    pub step: f64,
    pub e: f64,
    pub grad: Vec<f64>,
    pub x: Vec<f64>,
    pub evals: usize,
}

/// Hook invoked after every accepted iteration.
pub type AcceptHook<'a> = dyn FnMut(&LbfgsState) -> Result<()> + 'a;

/// Runs L-BFGS from the given state until convergence, the iteration cap,
/// or a line-search failure. State is left at the last accepted point.
pub fn run_lbfgs(
    obj: &mut EvalFn,
    state: &mut LbfgsState,
    cfg: &OptimizerConfig,
    u_scale: Option<(usize, f64)>,
    on_accept: &mut AcceptHook,
) -> Result<Termination> {
    cfg.validate()?;
    loop {
        let gnorm = vnorm(&state.grad);
        if gnorm <= cfg.grad_tol * state.initial_grad_norm {
            return Ok(Termination::Converged);
        }
        if state.iter >= cfg.max_iters {
            return Ok(Termination::MaxIters);
        }

        let mut dir = two_loop(&state.history, &state.grad, u_scale);
        let mut dphi0 = vdot(&state.grad, &dir);
        if dphi0 >= 0.0 {
            // Stale curvature; fall back to steepest descent.
            state.history.clear();
            dir = state.grad.iter().map(|g| -g).collect();
            dphi0 = -gnorm * gnorm;
        }
        let alpha0 = if state.iter == 0 {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let outcome = match line_search(obj, &state.x, state.e, &dir, dphi0, alpha0, cfg) {
            Ok(o) => o,
            Err(Error::LineSearchFailure { .. }) | Err(Error::NotDescentDirection { .. }) => {
                return Ok(Termination::LineSearchFailure);
            }
            Err(e) => return Err(e),
        };

        let s: Vec<f64> = outcome
            .x
            .iter()
            .zip(&state.x)
            .map(|(a, b)| a - b)
            .collect();
        let y: Vec<f64> = outcome
            .grad
            .iter()
            .zip(&state.grad)
            .map(|(a, b)| a - b)
            .collect();
        let sy = vdot(&s, &y);
        if sy > 1e-10 * vnorm(&s) * vnorm(&y) {
            if state.history.len() == cfg.memory {
                state.history.pop_front();
            }
            state.history.push_back((s, y, 1.0 / sy));
        }

        state.x = outcome.x;
        state.e = outcome.e;
        state.grad = outcome.grad;
        state.iter += 1;
        state.e_trace.push(state.e);
        state.grad_norm_trace.push(vnorm(&state.grad));
        on_accept(state)?;
    }
}

// ---------------------------------------------------------------------------
// Control-space objective
// ---------------------------------------------------------------------------

/// Registration objective over the stacked control vector.
pub struct ControlProblem<'a> {
    pub kernels: &'a KernelSet,
    pub params: &'a SchemeParams,
    pub powers: NormPowers,
    pub c_top: f64,
    pub c_end: f64,
    /// Ingested initial state `F(0)`.
    pub initial_state: Grid,
    /// Smoothed endpoint of the target's zero-control evolution.
    pub target_end: Grid,
}

/// Extra per-evaluation data surfaced to iteration hooks.
#[derive(Debug, Clone)]
pub struct EvalInfo {
    pub breakdown: ObjectiveBreakdown,
    pub endpoint: Grid,
}

impl<'a> ControlProblem<'a> {
    pub fn slots(&self) -> usize {
        self.params.grid.control_slots()
    }

    pub fn block(&self) -> usize {
        let n = self.params.grid.n;
        self.slots() * n * n
    }

    /// Flat dimension: `3 (T-1) N^2`.
    pub fn dim(&self) -> usize {
        3 * self.block()
    }

    /// Stacks `[u | m1 | m2]`, time-major, slot 0 included.
    pub fn pack(&self, u: &NormalControl, m: &MomentaField) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        for g in u.slices() {
            x.extend(g.iter());
        }
        for comp in [1, 2] {
            for g in m.component(comp) {
                x.extend(g.iter());
            }
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> Result<(NormalControl, MomentaField)> {
        let n = self.params.grid.n;
        let slots = self.slots();
        let per = n * n;
        if x.len() != self.dim() {
            return Err(Error::InvalidParameter(format!(
                "control vector has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let take = |base: usize| -> Vec<Grid> {
            (0..slots)
                .map(|k| {
                    Grid::from_shape_vec((n, n), x[base + k * per..base + (k + 1) * per].to_vec())
                        .expect("length checked")
                })
                .collect()
        };
        let u = NormalControl::new(take(0))?;
        let m = MomentaField::new(take(self.block()), take(2 * self.block()))?;
        Ok((u, m))
    }

    fn project_pinned(&self, pair: &GradientPair, grad: &mut [f64]) {
        // Slot 0 of every block is a pinned constant; zero its coordinates.
        let n = self.params.grid.n;
        let per = n * n;
        for b in 0..3 {
            let base = b * self.block();
            grad[base..base + per].iter_mut().for_each(|g| *g = 0.0);
        }
        let _ = pair;
    }

    /// Objective, gradient, and hook data at a control vector.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>, EvalInfo, Trajectory)> {
        let (u, m) = self.unpack(x)?;
        let traj = evolve(&self.initial_state, &u, &m, self.kernels, self.params)?;
        let (breakdown, pair) = gradient(
            &u,
            &m,
            &traj,
            &self.target_end,
            &self.powers,
            self.c_top,
            self.c_end,
            self.kernels,
            self.params,
        )?;
        let mut grad = Vec::with_capacity(self.dim());
        for g in &pair.grad_u {
            grad.extend(g.iter());
        }
        for g in &pair.grad_m1 {
            grad.extend(g.iter());
        }
        for g in &pair.grad_m2 {
            grad.extend(g.iter());
        }
        self.project_pinned(&pair, &mut grad);
        let info = EvalInfo {
            breakdown,
            endpoint: traj.endpoint().clone(),
        };
        Ok((breakdown.total, grad, info, traj))
    }
}

/// Per-iteration record passed to [`minimize_with_hook`] hooks.
pub struct IterationRecord<'a> {
    pub iter: usize,
    pub e: f64,
    pub grad_norm: f64,
    pub breakdown: ObjectiveBreakdown,
    pub endpoint: &'a Grid,
    pub state: &'a LbfgsState,
}

/// Minimizes the registration objective from given initial controls.
pub fn minimize_from(
    problem: &ControlProblem,
    u0: &NormalControl,
    m0: &MomentaField,
    cfg: &OptimizerConfig,
    hook: &mut dyn FnMut(IterationRecord) -> Result<()>,
) -> Result<OptimizationReport> {
    let x0 = problem.pack(u0, m0);
    let (e0, g0, info0, _) = problem.eval(&x0)?;
    let mut state = LbfgsState::init(x0, e0, g0);
    run_minimize(problem, &mut state, Some(info0), cfg, hook)
}

/// Minimizes starting from zero controls (the default initial guess).
pub fn minimize(
    problem: &ControlProblem,
    cfg: &OptimizerConfig,
    hook: &mut dyn FnMut(IterationRecord) -> Result<()>,
) -> Result<OptimizationReport> {
    let n = problem.params.grid.n;
    let slots = problem.slots();
    minimize_from(
        problem,
        &NormalControl::zeros(n, slots),
        &MomentaField::zeros(n, slots),
        cfg,
        hook,
    )
}

/// Continues a checkpointed optimization; the remaining trace is
/// bit-identical to an uninterrupted run under the same build.
pub fn resume_minimize(
    problem: &ControlProblem,
    state: &mut LbfgsState,
    cfg: &OptimizerConfig,
    hook: &mut dyn FnMut(IterationRecord) -> Result<()>,
) -> Result<OptimizationReport> {
    run_minimize(problem, state, None, cfg, hook)
}

fn run_minimize(
    problem: &ControlProblem,
    state: &mut LbfgsState,
    info0: Option<EvalInfo>,
    cfg: &OptimizerConfig,
    hook: &mut dyn FnMut(IterationRecord) -> Result<()>,
) -> Result<OptimizationReport> {
    if let Some(info) = &info0 {
        hook(IterationRecord {
            iter: state.iter,
            e: state.e,
            grad_norm: vnorm(&state.grad),
            breakdown: info.breakdown,
            endpoint: &info.endpoint,
            state,
        })?;
    }

    let u_scale = match cfg.u_block_scale {
        Some(scale) => Some((problem.block(), scale)),
        None if cfg.precondition_u && problem.c_top > 0.0 => {
            Some((problem.block(), 1.0 / problem.c_top))
        }
        None => None,
    };

    // The line search always ends on the accepted point, so after each
    // accepted iteration this cell holds that point's evaluation data.
    let info_cell: std::cell::RefCell<Option<EvalInfo>> = std::cell::RefCell::new(info0);
    let termination = {
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (e, g, info, _) = problem.eval(x)?;
            *info_cell.borrow_mut() = Some(info);
            Ok((e, g))
        };
        let mut on_accept = |st: &LbfgsState| -> Result<()> {
            let cell = info_cell.borrow();
            let info = cell.as_ref().expect("accepted point was just evaluated");
            hook(IterationRecord {
                iter: st.iter,
                e: st.e,
                grad_norm: *st.grad_norm_trace.last().unwrap(),
                breakdown: info.breakdown,
                endpoint: &info.endpoint,
                state: st,
            })
        };
        run_lbfgs(&mut obj, state, cfg, u_scale, &mut on_accept)?
    };

    let (u, m) = problem.unpack(&state.x)?;
    // After a line-search failure the last evaluation may be a rejected
    // trial; recompute the breakdown in that case.
    let cached = info_cell.borrow().clone();
    let final_objective = match cached {
        Some(info) if info.breakdown.total == state.e => info.breakdown,
        _ => {
            let (_, _, info, _) = problem.eval(&state.x)?;
            info.breakdown
        }
    };
    Ok(OptimizationReport {
        iterations: state.iter,
        e_trace: state.e_trace.clone(),
        grad_norm_trace: state.grad_norm_trace.clone(),
        termination,
        final_controls: (u, m),
        final_objective,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

fn write_vec(w: &mut impl Write, v: &[f64]) -> Result<()> {
    write_u64(w, v.len() as u64)?;
    for &x in v {
        write_f64(w, x)?;
    }
    Ok(())
}

fn read_vec(r: &mut impl Read) -> Result<Vec<f64>> {
    let len = read_u64(r)? as usize;
    let mut v = vec![0.0; len];
    for x in v.iter_mut() {
        *x = read_f64(r)?;
    }
    Ok(v)
}

/// Serializes the optimizer state behind the shared container header.
pub fn write_checkpoint(
    w: &mut impl Write,
    header: &ContainerHeader,
    state: &LbfgsState,
) -> Result<()> {
    header.write(w)?;
    write_u64(w, state.iter as u64)?;
    write_f64(w, state.e)?;
    write_f64(w, state.initial_grad_norm)?;
    write_vec(w, &state.x)?;
    write_vec(w, &state.grad)?;
    write_vec(w, &state.e_trace)?;
    write_vec(w, &state.grad_norm_trace)?;
    write_u64(w, state.history.len() as u64)?;
    for (s, y, rho) in &state.history {
        write_vec(w, s)?;
        write_vec(w, y)?;
        write_f64(w, *rho)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ContainerHeader, LbfgsState)> {
    let header = ContainerHeader::read(r)?;
    let iter = read_u64(r)? as usize;
    let e = read_f64(r)?;
    let initial_grad_norm = read_f64(r)?;
    let x = read_vec(r)?;
    let grad = read_vec(r)?;
    let e_trace = read_vec(r)?;
    let grad_norm_trace = read_vec(r)?;
    let hist_len = read_u64(r)? as usize;
    let mut history = VecDeque::with_capacity(hist_len);
    for _ in 0..hist_len {
        let s = read_vec(r)?;
        let y = read_vec(r)?;
        let rho = read_f64(r)?;
        history.push_back((s, y, rho));
    }
    Ok((
        header,
        LbfgsState {
            x,
            e,
            grad,
            iter,
            initial_grad_norm,
            e_trace,
            grad_norm_trace,
            history,
        },
    ))
}
