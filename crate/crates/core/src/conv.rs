//! Zero-padded discrete linear convolution on square grids.
//!
//! A kernel is a `K x K` grid (`K` odd) whose center entry is the zero
//! offset, so
//!
//! ```text
//! (k * h)[p] = sum_o k[o] h[p - o]
//! ```
//!
//! with the field extended by zero and only the central `N x N` slice kept.
//! Two paths are provided: a nested-loop direct path used as an oracle, and
//! an FFT path used everywhere else. Kernel transforms are cached in
//! [`PreparedKernel`]; both paths are deterministic (fixed summation order
//! per path) and agree to roughly 1e-14 relative.
//!
//! The adjoint of `h -> k * h` under the plain grid inner product is
//! convolution with the kernel flipped in both axes.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::Grid;

/// Smallest integer `>= n` whose prime factors are all in `{2, 3, 5}`.
pub fn next_fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for f in [2, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Flips a kernel in both axes (offset negation about the center entry).
pub fn flip_kernel(kernel: &Grid) -> Grid {
    let (ka, kb) = kernel.dim();
    Array2::from_shape_fn((ka, kb), |(a, b)| kernel[[ka - 1 - a, kb - 1 - b]])
}

fn check_kernel(kernel: &Grid) -> Result<usize> {
    let (ka, kb) = kernel.dim();
    if ka != kb || ka % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "kernel must be square with odd side, got {ka} x {kb}"
        )));
    }
    Ok((ka - 1) / 2)
}

fn check_field(field: &Grid, n: usize) -> Result<()> {
    if field.dim() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            got: field.dim(),
        });
    }
    Ok(())
}

/// Direct nested-loop convolution; the oracle path.
pub fn direct_convolve(kernel: &Grid, field: &Grid) -> Result<Grid> {
    let r = check_kernel(kernel)? as isize;
    let (n, nb) = field.dim();
    if n != nb {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            got: field.dim(),
        });
    }
    let mut out = Array2::zeros((n, n));
    let k = kernel.dim().0 as isize;
    for p1 in 0..n as isize {
        for p2 in 0..n as isize {
            let mut acc = 0.0;
            for a in 0..k {
                let q1 = p1 - (a - r);
                if q1 < 0 || q1 >= n as isize {
                    continue;
                }
                for b in 0..k {
                    let q2 = p2 - (b - r);
                    if q2 < 0 || q2 >= n as isize {
                        continue;
                    }
                    acc += kernel[[a as usize, b as usize]] * field[[q1 as usize, q2 as usize]];
                }
            }
            out[[p1 as usize, p2 as usize]] = acc;
        }
    }
    Ok(out)
}

/// FFT plans for one padded size, shareable across kernels of the same grid.
pub struct ConvPlan {
    n: usize,
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl ConvPlan {
    /// Plan for fields of size `n` and kernels with radius up to `max_radius`.
    pub fn new(n: usize, max_radius: usize) -> Arc<Self> {
        let p = next_fast_size(n + max_radius);
        let mut planner = FftPlanner::new();
        Arc::new(Self {
            n,
            p,
            fwd: planner.plan_fft_forward(p),
            inv: planner.plan_fft_inverse(p),
        })
    }

    pub fn field_size(&self) -> usize {
        self.n
    }

    pub fn padded_size(&self) -> usize {
        self.p
    }

    /// In-place 2D transform: rows, transpose, rows, transpose back.
    fn fft2(&self, buf: &mut [Complex<f64>], fwd: bool) {
        let p = self.p;
        let fft = if fwd { &self.fwd } else { &self.inv };
        for row in buf.chunks_exact_mut(p) {
            fft.process(row);
        }
        transpose_square(buf, p);
        for row in buf.chunks_exact_mut(p) {
            fft.process(row);
        }
        transpose_square(buf, p);
    }

    /// Spectrum of a kernel laid out with its center entry wrapped to (0,0).
    fn kernel_spectrum(&self, kernel: &Grid) -> Result<Vec<Complex<f64>>> {
        let r = check_kernel(kernel)? as isize;
        let p = self.p as isize;
        if self.n as isize + r > p {
            return Err(Error::InvalidParameter(format!(
                "padded size {p} too small for field {} with kernel radius {r}",
                self.n
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.p * self.p];
        let k = kernel.dim().0 as isize;
        for a in 0..k {
            let i = (a - r).rem_euclid(p) as usize;
            for b in 0..k {
                let j = (b - r).rem_euclid(p) as usize;
                buf[i * self.p + j] = Complex::new(kernel[[a as usize, b as usize]], 0.0);
            }
        }
        self.fft2(&mut buf, true);
        Ok(buf)
    }

    fn convolve_spectrum(&self, spectrum: &[Complex<f64>], field: &Grid) -> Result<Grid> {
        check_field(field, self.n)?;
        let p = self.p;
        let mut buf = vec![Complex::new(0.0, 0.0); p * p];
        for (i, row) in field.outer_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                buf[i * p + j] = Complex::new(v, 0.0);
            }
        }
        self.fft2(&mut buf, true);
        for (c, s) in buf.iter_mut().zip(spectrum.iter()) {
            *c *= s;
        }
        self.fft2(&mut buf, false);
        let scale = 1.0 / (p * p) as f64;
        Ok(Array2::from_shape_fn((self.n, self.n), |(i, j)| {
            buf[i * p + j].re * scale
        }))
    }
}

fn transpose_square(buf: &mut [Complex<f64>], p: usize) {
    for i in 0..p {
        for j in (i + 1)..p {
            buf.swap(i * p + j, j * p + i);
        }
    }
}

/// A kernel with cached transforms for the fast path and its adjoint.
pub struct PreparedKernel {
    grid: Grid,
    plan: Arc<ConvPlan>,
    spectrum: Vec<Complex<f64>>,
    flipped_spectrum: Vec<Complex<f64>>,
}

impl PreparedKernel {
    pub fn new(kernel: Grid, plan: Arc<ConvPlan>) -> Result<Self> {
        let spectrum = plan.kernel_spectrum(&kernel)?;
        let flipped_spectrum = plan.kernel_spectrum(&flip_kernel(&kernel))?;
        Ok(Self {
            grid: kernel,
            plan,
            spectrum,
            flipped_spectrum,
        })
    }

    pub fn kernel_grid(&self) -> &Grid {
        &self.grid
    }

    /// `kernel * field`, central slice.
    pub fn convolve(&self, field: &Grid) -> Grid {
        self.plan
            .convolve_spectrum(&self.spectrum, field)
            .expect("field shape checked by caller")
    }

    /// Adjoint of [`Self::convolve`]: convolution with the flipped kernel.
    pub fn adjoint_convolve(&self, field: &Grid) -> Grid {
        self.plan
            .convolve_spectrum(&self.flipped_spectrum, field)
            .expect("field shape checked by caller")
    }

    pub fn try_convolve(&self, field: &Grid) -> Result<Grid> {
        self.plan.convolve_spectrum(&self.spectrum, field)
    }
}

/// One-shot convolution; plans and transforms are built per call, so prefer
/// [`PreparedKernel`] in loops.
pub fn convolve(kernel: &Grid, field: &Grid) -> Result<Grid> {
    let r = check_kernel(kernel)?;
    let (n, nb) = field.dim();
    if n != nb {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            got: field.dim(),
        });
    }
    let plan = ConvPlan::new(n, r);
    let spectrum = plan.kernel_spectrum(kernel)?;
    plan.convolve_spectrum(&spectrum, field)
}

/// One-shot adjoint convolution: `<convolve(k, a), b> = <a, adjoint_convolve(k, b)>`.
pub fn adjoint_convolve(kernel: &Grid, field: &Grid) -> Result<Grid> {
    convolve(&flip_kernel(kernel), field)
}

/// Plain grid inner product `sum_ij a_ij b_ij` in a fixed order.
pub fn dot(a: &Grid, b: &Grid) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}
