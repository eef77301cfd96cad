//! Run configuration: CLI flags, flat key-value config files, and defaults.
//!
//! Precedence: command-line flag > config-file key > built-in default. File
//! keys are the long flag names (`N = 150`, `grad-tol = 1e-4`, ...), one
//! `key = value` per line, `#` comments allowed. `PHASEREG_THREADS` is the
//! only environment override.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub initial: PathBuf,
    pub target: PathBuf,
    pub out: PathBuf,
    pub n: usize,
    pub t_steps: usize,
    pub l: f64,
    pub sigma: f64,
    pub c_top: f64,
    pub c_end: f64,
    pub p: f64,
    pub r: f64,
    pub w: f64,
    pub a: f64,
    pub mu: f64,
    pub chi_psi: Option<f64>,
    pub kernel_width: Option<f64>,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search: usize,
    pub precondition_u: bool,
    pub u_block_scale: Option<f64>,
    pub discrepancy: bool,
    pub decompose: bool,
    pub frames: bool,
    pub contours: bool,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub threads: usize,
    pub multi_start: usize,
    pub soft_input: bool,
}

/// Optional values parsed from the CLI or a config file; `None` means "not
/// given here".
#[derive(Debug, Clone, Default)]
pub struct PartialConfig {
    pub initial: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n: Option<usize>,
    pub t_steps: Option<usize>,
    pub l: Option<f64>,
    pub sigma: Option<f64>,
    pub c_top: Option<f64>,
    pub c_end: Option<f64>,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub w: Option<f64>,
    pub a: Option<f64>,
    pub mu: Option<f64>,
    pub chi_psi: Option<f64>,
    pub kernel_width: Option<f64>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub memory: Option<usize>,
    pub wolfe_c1: Option<f64>,
    pub wolfe_c2: Option<f64>,
    pub max_line_search: Option<usize>,
    pub precondition_u: Option<bool>,
    pub u_block_scale: Option<f64>,
    pub discrepancy: Option<bool>,
    pub decompose: Option<bool>,
    pub frames: Option<bool>,
    pub contours: Option<bool>,
    pub checkpoint_every: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub multi_start: Option<usize>,
    pub soft_input: Option<bool>,
}

impl PartialConfig {
    /// Parses a flat key-value file.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                );
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_map(map).with_context(|| format!("in config file {}", path.display()))
    }

    fn from_map(map: BTreeMap<String, String>) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in map {
            let v = value.as_str();
            match key.as_str() {
                "initial" => cfg.initial = Some(PathBuf::from(v)),
                "target" => cfg.target = Some(PathBuf::from(v)),
                "out" => cfg.out = Some(PathBuf::from(v)),
                "N" => cfg.n = Some(parse(&key, v)?),
                "T" => cfg.t_steps = Some(parse(&key, v)?),
                "L" => cfg.l = Some(parse(&key, v)?),
                "sigma" => cfg.sigma = Some(parse(&key, v)?),
                "ctop" => cfg.c_top = Some(parse(&key, v)?),
                "cend" => cfg.c_end = Some(parse(&key, v)?),
                "p" => cfg.p = Some(parse(&key, v)?),
                "r" => cfg.r = Some(parse(&key, v)?),
                "W" => cfg.w = Some(parse(&key, v)?),
                "a" => cfg.a = Some(parse(&key, v)?),
                "mu" => cfg.mu = Some(parse(&key, v)?),
                "chi-psi" => cfg.chi_psi = Some(parse(&key, v)?),
                "kernel-width" => cfg.kernel_width = Some(parse(&key, v)?),
                "max-iters" => cfg.max_iters = Some(parse(&key, v)?),
                "grad-tol" => cfg.grad_tol = Some(parse(&key, v)?),
                "memory" => cfg.memory = Some(parse(&key, v)?),
                "wolfe-c1" => cfg.wolfe_c1 = Some(parse(&key, v)?),
                "wolfe-c2" => cfg.wolfe_c2 = Some(parse(&key, v)?),
                "max-line-search" => cfg.max_line_search = Some(parse(&key, v)?),
                "precondition-u" => cfg.precondition_u = Some(parse(&key, v)?),
                "u-block-scale" => cfg.u_block_scale = Some(parse(&key, v)?),
                "discrepancy" => cfg.discrepancy = Some(parse(&key, v)?),
                "decompose" => cfg.decompose = Some(parse(&key, v)?),
                "frames" => cfg.frames = Some(parse(&key, v)?),
                "contours" => cfg.contours = Some(parse(&key, v)?),
                "checkpoint-every" => cfg.checkpoint_every = Some(parse(&key, v)?),
                "seed" => cfg.seed = Some(parse(&key, v)?),
                "threads" => cfg.threads = Some(parse(&key, v)?),
                "multi-start" => cfg.multi_start = Some(parse(&key, v)?),
                "soft-input" => cfg.soft_input = Some(parse(&key, v)?),
                other => bail!("unknown config key `{other}`"),
            }
        }
        Ok(cfg)
    }

    /// Overlays `self` (higher precedence) on `base`.
    pub fn or(self, base: Self) -> Self {
        macro_rules! pick {
            ($($field:ident),* $(,)?) => {
                Self { $($field: self.$field.or(base.$field)),* }
            };
        }
        pick!(
            initial, target, out, n, t_steps, l, sigma, c_top, c_end, p, r, w, a, mu, chi_psi,
            kernel_width, max_iters, grad_tol, memory, wolfe_c1, wolfe_c2, max_line_search,
            precondition_u, u_block_scale, discrepancy, decompose, frames, contours,
            checkpoint_every, seed, threads, multi_start, soft_input,
        )
    }

    /// Fills defaults and checks required fields.
    pub fn resolve(self) -> anyhow::Result<RunConfig> {
        let Some(initial) = self.initial else {
            bail!("missing required input: --initial");
        };
        let Some(target) = self.target else {
            bail!("missing required input: --target");
        };
        let Some(out) = self.out else {
            bail!("missing required output directory: --out");
        };
        let threads = match std::env::var("PHASEREG_THREADS") {
            Ok(v) => v
                .parse()
                .with_context(|| format!("PHASEREG_THREADS = {v} is not a thread count"))?,
            Err(_) => self.threads.unwrap_or(1),
        };
        Ok(RunConfig {
            initial,
            target,
            out,
            n: self.n.unwrap_or(150),
            t_steps: self.t_steps.unwrap_or(30),
            l: self.l.unwrap_or(1.0),
            sigma: self.sigma.unwrap_or(0.1),
            c_top: self.c_top.unwrap_or(1e8),
            c_end: self.c_end.unwrap_or(1e8),
            p: self.p.unwrap_or(4.0),
            r: self.r.unwrap_or(6.0),
            w: self.w.unwrap_or(100.0),
            a: self.a.unwrap_or(0.01),
            mu: self.mu.unwrap_or(0.05),
            chi_psi: self.chi_psi,
            kernel_width: self.kernel_width,
            max_iters: self.max_iters.unwrap_or(300),
            grad_tol: self.grad_tol.unwrap_or(1e-6),
            memory: self.memory.unwrap_or(10),
            wolfe_c1: self.wolfe_c1.unwrap_or(1e-4),
            wolfe_c2: self.wolfe_c2.unwrap_or(0.9),
            max_line_search: self.max_line_search.unwrap_or(25),
            precondition_u: self.precondition_u.unwrap_or(false),
            u_block_scale: self.u_block_scale,
            discrepancy: self.discrepancy.unwrap_or(false),
            decompose: self.decompose.unwrap_or(false),
            frames: self.frames.unwrap_or(false),
            contours: self.contours.unwrap_or(false),
            checkpoint_every: self.checkpoint_every.unwrap_or(0),
            seed: self.seed.unwrap_or(0),
            threads,
            multi_start: self.multi_start.unwrap_or(1),
            soft_input: self.soft_input.unwrap_or(false),
        })
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("config key `{key}`: cannot parse `{value}`: {e}"))
}
