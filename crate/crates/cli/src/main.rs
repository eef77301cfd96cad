use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use phasereg_cli::config::PartialConfig;
use phasereg_cli::runner;

/// Registers one planar shape onto another by optimal control of a
/// convective Allen-Cahn phase field, reporting the control energy and the
/// symmetrized discrepancy between the shapes.
#[derive(Parser, Debug)]
#[command(name = "phasereg", version, about)]
struct Cli {
    /// Initial shape image (grayscale PNG or PGM).
    #[arg(long)]
    initial: Option<PathBuf>,

    /// Target shape image (grayscale PNG or PGM).
    #[arg(long)]
    target: Option<PathBuf>,

    /// Output directory for manifest, metrics and exports.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Flat key-value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Grid points per axis (even values are bumped to the next odd size).
    #[arg(long = "N")]
    n: Option<usize>,

    /// Time steps on [0, 1].
    #[arg(long = "T")]
    t_steps: Option<usize>,

    /// Domain half-width.
    #[arg(long = "L")]
    l: Option<f64>,

    /// Diffusion scale sigma.
    #[arg(long)]
    sigma: Option<f64>,

    /// Weight of the normal-control cost.
    #[arg(long)]
    ctop: Option<f64>,

    /// Weight of the endpoint misfit.
    #[arg(long)]
    cend: Option<f64>,

    /// Time exponent of the control norms (> 2).
    #[arg(long)]
    p: Option<f64>,

    /// Space exponent of the normal-control norm (> 2p/(p-2)).
    #[arg(long)]
    r: Option<f64>,

    /// Reaction well depth.
    #[arg(long = "W")]
    w: Option<f64>,

    /// Range padding of the substitution map.
    #[arg(long)]
    a: Option<f64>,

    /// Logit gain of the substitution map.
    #[arg(long)]
    mu: Option<f64>,

    /// Fixed smoothing floor for the gradient magnitude (default ties it to
    /// the time step).
    #[arg(long = "chi-psi")]
    chi_psi: Option<f64>,

    /// Width of the Gaussian velocity kernel (default 10 dx).
    #[arg(long = "kernel-width")]
    kernel_width: Option<f64>,

    /// Iteration cap of the optimizer.
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,

    /// Relative gradient-norm tolerance.
    #[arg(long = "grad-tol")]
    grad_tol: Option<f64>,

    /// History pairs kept by the quasi-Newton recursion.
    #[arg(long)]
    memory: Option<usize>,

    /// Sufficient-decrease constant of the line search.
    #[arg(long = "wolfe-c1")]
    wolfe_c1: Option<f64>,

    /// Curvature constant of the line search.
    #[arg(long = "wolfe-c2")]
    wolfe_c2: Option<f64>,

    /// Maximum objective evaluations per line search.
    #[arg(long = "max-line-search")]
    max_line_search: Option<usize>,

    /// Rescale the normal-control gradient block by 1/C_top.
    #[arg(long = "precondition-u", action = clap::ArgAction::SetTrue)]
    precondition_u: bool,

    /// Explicit initial-Hessian factor for the normal-control block
    /// (overrides --precondition-u).
    #[arg(long = "u-block-scale")]
    u_block_scale: Option<f64>,

    /// Run both directions and report the symmetrized discrepancy.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    discrepancy: bool,

    /// Export the diffeomorphic/topological decomposition.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    decompose: bool,

    /// Export trajectory frames (raw grids and PNG renders).
    #[arg(long, action = clap::ArgAction::SetTrue)]
    frames: bool,

    /// Export contour-overlay renders per frame.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    contours: bool,

    /// Write an optimizer checkpoint every K accepted iterations (0 = off).
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<usize>,

    /// Seed for the multi-start perturbations.
    #[arg(long)]
    seed: Option<u64>,

    /// Thread count hint (>= 2 runs discrepancy directions concurrently);
    /// PHASEREG_THREADS overrides.
    #[arg(long)]
    threads: Option<usize>,

    /// Number of optimization starts (first is the zero guess).
    #[arg(long = "multi-start")]
    multi_start: Option<usize>,

    /// Accept grayscale inputs in [0, 1] instead of strict binary images.
    #[arg(long = "soft-input", action = clap::ArgAction::SetTrue)]
    soft_input: bool,
}

impl Cli {
    fn into_partial(self) -> (Option<PathBuf>, PartialConfig) {
        let flag = |b: bool| if b { Some(true) } else { None };
        (
            self.config,
            PartialConfig {
                initial: self.initial,
                target: self.target,
                out: self.out,
                n: self.n,
                t_steps: self.t_steps,
                l: self.l,
                sigma: self.sigma,
                c_top: self.ctop,
                c_end: self.cend,
                p: self.p,
                r: self.r,
                w: self.w,
                a: self.a,
                mu: self.mu,
                chi_psi: self.chi_psi,
                kernel_width: self.kernel_width,
                max_iters: self.max_iters,
                grad_tol: self.grad_tol,
                memory: self.memory,
                wolfe_c1: self.wolfe_c1,
                wolfe_c2: self.wolfe_c2,
                max_line_search: self.max_line_search,
                precondition_u: flag(self.precondition_u),
                u_block_scale: self.u_block_scale,
                discrepancy: flag(self.discrepancy),
                decompose: flag(self.decompose),
                frames: flag(self.frames),
                contours: flag(self.contours),
                checkpoint_every: self.checkpoint_every,
                seed: self.seed,
                threads: self.threads,
                multi_start: self.multi_start,
                soft_input: flag(self.soft_input),
            },
        )
    }
}

fn main() -> ExitCode {
    let (config_path, cli) = Cli::parse().into_partial();
    let merged = match config_path {
        Some(path) => match PartialConfig::from_file(&path) {
            Ok(file_cfg) => cli.or(file_cfg),
            Err(err) => {
                eprintln!("error: {err:#}");
                return ExitCode::from(runner::EXIT_IO as u8);
            }
        },
        None => cli,
    };
    let cfg = match merged.resolve() {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::from(runner::EXIT_IO as u8);
        }
    };
    ExitCode::from(runner::run(&cfg) as u8)
}
