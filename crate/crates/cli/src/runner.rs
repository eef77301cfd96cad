//! Executes a configured run: registration or discrepancy, metrics CSV,
//! frame/contour/decomposition exports, checkpoints, and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use phasereg::controls::{u_norm_p, NormPowers};
use phasereg::forward::{evolve, evolve_free, ingest_initial, support_distance_to_boundary};
use phasereg::grid::GridSpec;
use phasereg::io as container;
use phasereg::kernels::{KernelSet, RadialKernelSpec};
use phasereg::optim::{IterationRecord, OptimizerConfig, Termination};
use phasereg::registration::{
    component_count, decompose, problem_manifest, solve_with_hook, Manifest, RegistrationProblem,
    SolveOutcome, INTERFACE_LEVEL,
};
use phasereg::Grid;

use crate::config::RunConfig;
use crate::imageio::{load_image, save_field_png, save_render_png};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_MAX_ITERS: i32 = 3;
pub const EXIT_LINE_SEARCH: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIters => "max_iters",
        Termination::LineSearchFailure => "line_search_failure",
    }
}

fn termination_exit(t: Termination) -> i32 {
    match t {
        Termination::Converged => EXIT_OK,
        Termination::MaxIters => EXIT_MAX_ITERS,
        Termination::LineSearchFailure => EXIT_LINE_SEARCH,
    }
}

/// One metrics row per accepted iteration.
#[derive(Debug, Clone)]
struct MetricsRow {
    iter: usize,
    e: f64,
    grad_norm: f64,
    components: usize,
}

const METRICS_HEADER: &str = "iteration,E,grad_norm,component_count\n";

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let mut out = String::from(METRICS_HEADER);
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iter, r.e, r.grad_norm, r.components
        ));
    }
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Entry point used by `main`; maps every failure to a documented exit code.
pub fn run(cfg: &RunConfig) -> i32 {
    match run_inner(cfg) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let num = err
                .downcast_ref::<phasereg::Error>()
                .map(numeric_exit)
                .unwrap_or(EXIT_IO);
            num
        }
    }
}

fn numeric_exit(err: &phasereg::Error) -> i32 {
    use phasereg::Error::*;
    match err {
        NonFinite { .. } | KernelNotPositiveDefinite { .. } | OptimizerAbort { .. } => EXIT_NUMERIC,
        LineSearchFailure { .. } | NotDescentDirection { .. } => EXIT_LINE_SEARCH,
        Io(_) => EXIT_IO,
        _ => EXIT_IO,
    }
}

struct DirectionArtifacts {
    outcome: SolveOutcome,
    rows: Vec<MetricsRow>,
}

fn solve_direction(
    problem: &RegistrationProblem,
    swap: bool,
    checkpoint_every: usize,
    checkpoint_dir: Option<&Path>,
    powers: &NormPowers,
) -> anyhow::Result<DirectionArtifacts> {
    let mut rows = Vec::new();
    let header = container::ContainerHeader {
        n: problem.grid.n as u32,
        t_steps: problem.grid.t_steps as u32,
        p: powers.p(),
        r: powers.r(),
    };
    let tag = if swap { "backward" } else { "forward" };
    let outcome = solve_with_hook(problem, swap, &mut |rec: IterationRecord| {
        rows.push(MetricsRow {
            iter: rec.iter,
            e: rec.e,
            grad_norm: rec.grad_norm,
            components: component_count(rec.endpoint, INTERFACE_LEVEL),
        });
        if checkpoint_every > 0 && rec.iter > 0 && rec.iter % checkpoint_every == 0 {
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(format!("{tag}_iter_{:06}.ckpt", rec.iter));
                let mut file = fs::File::create(&path).map_err(phasereg::Error::Io)?;
                phasereg::optim::write_checkpoint(&mut file, &header, rec.state)?;
            }
        }
        Ok(())
    })?;
    Ok(DirectionArtifacts { outcome, rows })
}

fn run_inner(cfg: &RunConfig) -> anyhow::Result<i32> {
    // Validate inputs before any output is created, so a missing file
    // leaves no partial artifacts behind.
    for path in [&cfg.initial, &cfg.target] {
        if !path.is_file() {
            anyhow::bail!(
                "input image {} does not exist or is not a file",
                path.display()
            );
        }
    }

    let grid = GridSpec::with_coercion(cfg.n, cfg.l, cfg.t_steps, cfg.sigma)
        .map_err(anyhow::Error::from)?;
    if let Some(requested) = grid.n_requested {
        eprintln!(
            "warning: N = {requested} is even; using the next odd size N = {}",
            grid.n
        );
    }
    if grid.tau < grid.dx {
        eprintln!(
            "warning: tau = {:.4} is below one cell ({:.4}); the heat kernel is under-resolved",
            grid.tau, grid.dx
        );
    }

    let f0 = load_image(&cfg.initial, grid.n, cfg.soft_input)?;
    let f_target = load_image(&cfg.target, grid.n, cfg.soft_input)?;
    for (name, f) in [("initial", &f0), ("target", &f_target)] {
        let margin = support_distance_to_boundary(f, &grid, INTERFACE_LEVEL);
        if margin < 5.0 * grid.tau {
            eprintln!(
                "warning: {name} shape support is {margin:.3} from the domain boundary \
                 (less than 5 tau = {:.3}); zero padding will distort it",
                5.0 * grid.tau
            );
        }
    }

    let powers = NormPowers::new(cfg.p, cfg.r).map_err(anyhow::Error::from)?;
    let mut problem = RegistrationProblem::new(f0.clone(), f_target.clone(), grid);
    problem.powers = powers;
    problem.c_top = cfg.c_top;
    problem.c_end = cfg.c_end;
    problem.reaction = phasereg::field_ops::ReactionSpec::new(cfg.w).map_err(anyhow::Error::from)?;
    problem.mbp = phasereg::field_ops::MbpMapSpec::new(cfg.a, cfg.mu).map_err(anyhow::Error::from)?;
    problem.chi_psi = cfg.chi_psi;
    if let Some(width) = cfg.kernel_width {
        problem.kappa = RadialKernelSpec::Gaussian { width };
    }
    problem.optimizer = OptimizerConfig {
        memory: cfg.memory,
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        wolfe_c1: cfg.wolfe_c1,
        wolfe_c2: cfg.wolfe_c2,
        max_line_search: cfg.max_line_search,
        precondition_u: cfg.precondition_u,
        u_block_scale: cfg.u_block_scale,
    };
    problem.soft_input = cfg.soft_input;
    problem.multi_start = cfg.multi_start;
    problem.seed = cfg.seed;
    problem.threads = cfg.threads;
    problem.validate().map_err(anyhow::Error::from)?;

    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    let checkpoint_dir = if cfg.checkpoint_every > 0 {
        let dir = cfg.out.join("checkpoints");
        fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };

    let mut manifest = problem_manifest(&problem);
    manifest.push("input.initial", cfg.initial.display());
    manifest.push("input.target", cfg.target.display());
    manifest.push("mode", if cfg.discrepancy { "discrepancy" } else { "solve" });

    let mut paths: Vec<(String, PathBuf)> = Vec::new();
    let exit;

    if cfg.discrepancy {
        let run_dir = |swap: bool| {
            solve_direction(
                &problem,
                swap,
                cfg.checkpoint_every,
                checkpoint_dir.as_deref(),
                &powers,
            )
        };
        let (fwd, bwd) = if cfg.threads >= 2 {
            let (a, b) = std::thread::scope(|s| {
                let fh = s.spawn(|| run_dir(false));
                let bh = s.spawn(|| run_dir(true));
                (fh.join().expect("forward thread"), bh.join().expect("backward thread"))
            });
            (a?, b?)
        } else {
            (run_dir(false)?, run_dir(true)?)
        };

        let d_sigma = fwd.outcome.rho.min(bwd.outcome.rho);
        manifest.push("result.rho_forward", fwd.outcome.rho);
        manifest.push("result.rho_backward", bwd.outcome.rho);
        manifest.push("result.d_sigma", d_sigma);
        for (tag, art) in [("forward", &fwd), ("backward", &bwd)] {
            manifest.push(
                &format!("result.{tag}.termination"),
                termination_name(art.outcome.report.termination),
            );
            manifest.push(&format!("result.{tag}.iterations"), art.outcome.report.iterations);
            manifest.push(
                &format!("result.{tag}.e_running"),
                art.outcome.report.final_objective.running,
            );
            manifest.push(
                &format!("result.{tag}.e_endpoint"),
                art.outcome.report.final_objective.endpoint,
            );
            let metrics = cfg.out.join(format!("metrics_{tag}.csv"));
            write_metrics(&metrics, &art.rows)?;
            paths.push((format!("paths.metrics_{tag}"), metrics));
        }
        export_direction(cfg, &problem, &fwd.outcome, "forward", &mut manifest, &mut paths)?;
        export_direction(cfg, &problem, &bwd.outcome, "backward", &mut manifest, &mut paths)?;
        exit = termination_exit(fwd.outcome.report.termination)
            .max(termination_exit(bwd.outcome.report.termination));
    } else {
        let art = solve_direction(
            &problem,
            false,
            cfg.checkpoint_every,
            checkpoint_dir.as_deref(),
            &powers,
        )?;
        manifest.push("result.rho", art.outcome.rho);
        manifest.push(
            "result.termination",
            termination_name(art.outcome.report.termination),
        );
        manifest.push("result.iterations", art.outcome.report.iterations);
        manifest.push("result.e_total", art.outcome.report.final_objective.total);
        manifest.push("result.e_running", art.outcome.report.final_objective.running);
        manifest.push("result.e_endpoint", art.outcome.report.final_objective.endpoint);
        let (u_opt, _) = &art.outcome.report.final_controls;
        manifest.push("result.u_norm_p", u_norm_p(u_opt, &powers, &grid));
        let metrics = cfg.out.join("metrics.csv");
        write_metrics(&metrics, &art.rows)?;
        paths.push(("paths.metrics".into(), metrics));
        export_direction(cfg, &problem, &art.outcome, "forward", &mut manifest, &mut paths)?;
        exit = termination_exit(art.outcome.report.termination);
    }

    for (key, path) in &paths {
        manifest.push(key, path.display());
    }
    manifest.push("exit_code", exit);
    let manifest_path = cfg.out.join("manifest.txt");
    fs::write(&manifest_path, manifest.to_text())
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;
    println!("{}", manifest_path.display());
    Ok(exit)
}

/// Writes controls, trajectory frames, contour renders and the
/// decomposition for one solved direction.
fn export_direction(
    cfg: &RunConfig,
    problem: &RegistrationProblem,
    outcome: &SolveOutcome,
    tag: &str,
    manifest: &mut Manifest,
    paths: &mut Vec<(String, PathBuf)>,
) -> anyhow::Result<()> {
    let grid = problem.grid;
    let powers = problem.powers;
    let params = problem.scheme_params();
    let kernels = KernelSet::new(&grid, problem.kappa).map_err(anyhow::Error::from)?;
    let (u_opt, m_opt) = &outcome.report.final_controls;

    let controls_path = cfg.out.join(format!("controls_{tag}.bin"));
    let mut file = fs::File::create(&controls_path)?;
    container::write_controls(&mut file, u_opt, m_opt, &powers, grid.t_steps)
        .map_err(anyhow::Error::from)?;
    paths.push((format!("paths.controls_{tag}"), controls_path));

    // Re-run the evolution with the optimal controls for the exports.
    let source = if tag == "backward" {
        &problem.f_target
    } else {
        &problem.f0
    };
    let initial = ingest_initial(source, &problem.mbp, problem.soft_input)
        .map_err(anyhow::Error::from)?;
    let traj = evolve(&initial, u_opt, m_opt, &kernels, &params).map_err(anyhow::Error::from)?;

    let counts: Vec<String> = traj
        .smoothed
        .iter()
        .map(|f| component_count(f, INTERFACE_LEVEL).to_string())
        .collect();
    manifest.push(
        &format!("result.{tag}.component_counts_per_frame"),
        counts.join(","),
    );

    if cfg.frames {
        let dir = cfg.out.join(format!("frames_{tag}"));
        fs::create_dir_all(&dir)?;
        for (k, f) in traj.smoothed.iter().enumerate() {
            let raw = dir.join(format!("frame_{k:03}.bin"));
            let mut file = fs::File::create(&raw)?;
            container::write_frame(&mut file, f, grid.t_steps, &powers)
                .map_err(anyhow::Error::from)?;
            save_field_png(f, &dir.join(format!("frame_{k:03}.png")))?;
        }
        paths.push((format!("paths.frames_{tag}"), dir));
    }
    if cfg.contours {
        let dir = cfg.out.join(format!("contours_{tag}"));
        fs::create_dir_all(&dir)?;
        for (k, f) in traj.smoothed.iter().enumerate() {
            save_render_png(f, INTERFACE_LEVEL, &dir.join(format!("contour_{k:03}.png")))?;
        }
        paths.push((format!("paths.contours_{tag}"), dir));
    }
    if cfg.decompose && tag == "forward" {
        let dir = cfg.out.join("decomposition");
        fs::create_dir_all(&dir)?;
        let dec = decompose(&outcome.report, problem).map_err(anyhow::Error::from)?;
        save_field_png(&dec.v_only_endpoint, &dir.join("v_only_endpoint.png"))?;
        save_field_png(&dec.u_only_endpoint, &dir.join("u_only_endpoint.png"))?;
        save_field_png(&dec.advected_indicator, &dir.join("advected_indicator.png"))?;
        let flow_png = dir.join("flow.png");
        save_flow_png(&dec.flow, &dec.labels, &grid, &flow_png)?;
        manifest.push(
            "result.decomposition.v_only_components",
            component_count(&dec.v_only_endpoint, INTERFACE_LEVEL),
        );
        manifest.push(
            "result.decomposition.u_only_components",
            component_count(&dec.u_only_endpoint, INTERFACE_LEVEL),
        );
        manifest.push(
            "result.decomposition.advected_components",
            component_count(&dec.advected_indicator, INTERFACE_LEVEL),
        );
        paths.push(("paths.decomposition".into(), dir));
    }

    // Free evolution of the target for reference (what the endpoint is
    // compared against).
    let target_source = if tag == "backward" { &problem.f0 } else { &problem.f_target };
    let tgt = ingest_initial(target_source, &problem.mbp, problem.soft_input)
        .map_err(anyhow::Error::from)?;
    let tgt_end = evolve_free(&tgt, &kernels, &params).map_err(anyhow::Error::from)?;
    if cfg.frames {
        let path = cfg.out.join(format!("target_end_{tag}.png"));
        save_field_png(tgt_end.endpoint(), &path)?;
        paths.push((format!("paths.target_end_{tag}"), path));
    }
    Ok(())
}

/// Deformed-grid plot: images of every fourth grid line under the flow,
/// with particles of the initial shape colored by component.
fn save_flow_png(
    flow: &[(Grid, Grid)],
    labels: &ndarray::Array2<u32>,
    grid: &GridSpec,
    path: &Path,
) -> anyhow::Result<()> {
    use image::{Rgb, RgbImage};
    let n = grid.n;
    let scale = 4usize;
    let size = (n * scale) as u32;
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let (xs, ys) = flow.last().expect("flow has at least the identity");

    let to_px = |x: f64, y: f64| -> Option<(u32, u32)> {
        let fi = (x + grid.l) / grid.dx * scale as f64;
        let fj = (y + grid.l) / grid.dx * scale as f64;
        let col = fi.round() as isize;
        let row = (size as isize - 1) - fj.round() as isize;
        if col >= 0 && row >= 0 && col < size as isize && row < size as isize {
            Some((col as u32, row as u32))
        } else {
            None
        }
    };

    let line_color = Rgb([170, 200, 255]);
    let mut draw_polyline = |pts: Vec<(f64, f64)>, color: Rgb<u8>| {
        for pair in pts.windows(2) {
            let (x0, y0) = pair[0];
            let (x1, y1) = pair[1];
            let steps = 2 * scale;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                if let Some((c, r)) = to_px(x0 + t * (x1 - x0), y0 + t * (y1 - y0)) {
                    img.put_pixel(c, r, color);
                }
            }
        }
    };
    for i in (0..n).step_by(4) {
        draw_polyline((0..n).map(|j| (xs[[i, j]], ys[[i, j]])).collect(), line_color);
        draw_polyline((0..n).map(|j| (xs[[j, i]], ys[[j, i]])).collect(), line_color);
    }

    let palette = [
        Rgb([220, 30, 30]),
        Rgb([30, 150, 30]),
        Rgb([230, 140, 20]),
        Rgb([60, 60, 220]),
        Rgb([160, 40, 160]),
    ];
    for ((i, j), &label) in labels.indexed_iter() {
        if label > 0 {
            if let Some((c, r)) = to_px(xs[[i, j]], ys[[i, j]]) {
                img.put_pixel(c, r, palette[(label as usize - 1) % palette.len()]);
            }
        }
    }
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Writes the metrics header format (used by tests to pin the schema).
pub fn metrics_schema() -> &'static str {
    METRICS_HEADER
}
