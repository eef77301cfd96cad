//! Discrete heat kernel, its first derivatives, and the RKHS kernel.
//!
//! With `tau = sigma * sqrt(dt)` the entries are
//!
//! ```text
//! M[i][j]  = dx^2 exp(-(x_i^2 + x_j^2) / (2 tau^2)) / (2 pi tau^2)
//! DM[i][j] = -(x_i / tau^2) M[i][j]
//! ```
//!
//! so that `M * h` approximates Gaussian smoothing and `DM * h`, `DM^T * h`
//! the two partial derivatives of the smoothed field. The normalization
//! `2 pi tau^2` makes the kernel sum to one (quadrature of the 2D Gaussian);
//! `M` and `DM` are sampled on the `N x N` grid of offsets in `[-L, L]^2`.
//!
//! The RKHS kernel `Ktilde` stores `kappa(|o|)` on the full offset grid
//! `[-2L, 2L]^2` (size `(2N-1) x (2N-1)`) so that `Ktilde * m` equals the
//! collocation sum `sum_q kappa(|x_p - x_q|) m_q` over all grid pairs
//! exactly, with no truncation of long-range interactions.

use std::sync::Arc;

use ndarray::Array2;

use crate::conv::{ConvPlan, PreparedKernel};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::Grid;

/// Radial positive-definite kernel for the velocity space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialKernelSpec {
    /// `kappa(rho) = exp(-rho^2 / (2 s^2))`.
    Gaussian { width: f64 },
}

impl RadialKernelSpec {
    /// Default width `10 dx`.
    pub fn default_for(grid: &GridSpec) -> Self {
        RadialKernelSpec::Gaussian {
            width: 10.0 * grid.dx,
        }
    }

    pub fn eval(&self, rho: f64) -> f64 {
        match *self {
            RadialKernelSpec::Gaussian { width } => (-rho * rho / (2.0 * width * width)).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            RadialKernelSpec::Gaussian { width } => {
                if !(width > 0.0 && width.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "radial kernel width {width} must be positive and finite"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Precomputed kernels with cached transforms; immutable and shareable.
pub struct KernelSet {
    grid: GridSpec,
    kappa: RadialKernelSpec,
    m: PreparedKernel,
    dm: PreparedKernel,
    dmt: PreparedKernel,
    ktilde: PreparedKernel,
}

impl KernelSet {
    pub fn new(grid: &GridSpec, kappa: RadialKernelSpec) -> Result<Self> {
        kappa.validate()?;
        let n = grid.n;
        let m_grid = heat_kernel_grid(grid);
        let dm_grid = heat_kernel_dx1_grid(grid);
        let dmt_grid = dm_grid.t().to_owned();
        let ktilde_grid = radial_kernel_grid(grid, kappa);

        // One padded size fits every kernel: radius N-1 for Ktilde.
        let plan = ConvPlan::new(n, n - 1);
        Ok(Self {
            grid: *grid,
            kappa,
            m: PreparedKernel::new(m_grid, Arc::clone(&plan))?,
            dm: PreparedKernel::new(dm_grid, Arc::clone(&plan))?,
            dmt: PreparedKernel::new(dmt_grid, Arc::clone(&plan))?,
            ktilde: PreparedKernel::new(ktilde_grid, plan)?,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn radial_spec(&self) -> RadialKernelSpec {
        self.kappa
    }

    pub fn m_grid(&self) -> &Grid {
        self.m.kernel_grid()
    }

    pub fn dm_grid(&self) -> &Grid {
        self.dm.kernel_grid()
    }

    pub fn dmt_grid(&self) -> &Grid {
        self.dmt.kernel_grid()
    }

    /// Full-offset RKHS kernel grid, size `(2N-1) x (2N-1)`.
    pub fn ktilde_grid(&self) -> &Grid {
        self.ktilde.kernel_grid()
    }

    /// `M * h`: heat-kernel smoothing.
    pub fn smooth(&self, h: &Grid) -> Grid {
        self.m.convolve(h)
    }

    /// Adjoint of [`Self::smooth`] (equals it, `M` being even).
    pub fn smooth_adjoint(&self, h: &Grid) -> Grid {
        self.m.adjoint_convolve(h)
    }

    /// `DM * h`: first-axis derivative of the smoothed field.
    pub fn deriv_x1(&self, h: &Grid) -> Grid {
        self.dm.convolve(h)
    }

    pub fn deriv_x1_adjoint(&self, h: &Grid) -> Grid {
        self.dm.adjoint_convolve(h)
    }

    /// `DM^T * h`: second-axis derivative of the smoothed field.
    pub fn deriv_x2(&self, h: &Grid) -> Grid {
        self.dmt.convolve(h)
    }

    pub fn deriv_x2_adjoint(&self, h: &Grid) -> Grid {
        self.dmt.adjoint_convolve(h)
    }

    /// `Ktilde * m`: velocity component from a momenta grid.
    pub fn rkhs_apply(&self, m: &Grid) -> Grid {
        self.ktilde.convolve(m)
    }

    /// Adjoint of [`Self::rkhs_apply`] (equals it, the kernel being radial).
    pub fn rkhs_adjoint(&self, m: &Grid) -> Grid {
        self.ktilde.adjoint_convolve(m)
    }

    /// Sum of all heat-kernel entries; close to 1 once `tau` spans a few
    /// cells.
    pub fn mass(&self) -> f64 {
        self.m.kernel_grid().sum()
    }
}

fn heat_kernel_grid(grid: &GridSpec) -> Grid {
    let n = grid.n;
    let tau2 = grid.tau * grid.tau;
    let norm = grid.dx * grid.dx / (2.0 * std::f64::consts::PI * tau2);
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (x, y) = (grid.coord(i), grid.coord(j));
        norm * (-(x * x + y * y) / (2.0 * tau2)).exp()
    })
}

fn heat_kernel_dx1_grid(grid: &GridSpec) -> Grid {
    let m = heat_kernel_grid(grid);
    let tau2 = grid.tau * grid.tau;
    Array2::from_shape_fn(m.raw_dim(), |(i, j)| -(grid.coord(i) / tau2) * m[[i, j]])
}

fn radial_kernel_grid(grid: &GridSpec, kappa: RadialKernelSpec) -> Grid {
    let k = 2 * grid.n - 1;
    let r = (grid.n - 1) as isize;
    Array2::from_shape_fn((k, k), |(a, b)| {
        let ox = (a as isize - r) as f64 * grid.dx;
        let oy = (b as isize - r) as f64 * grid.dx;
        kappa.eval((ox * ox + oy * oy).sqrt())
    })
}
