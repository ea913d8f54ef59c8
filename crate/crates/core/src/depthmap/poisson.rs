//! Spectral Poisson solver with homogeneous Dirichlet boundary.
//!
//! The 5-point Laplacian on the `(h-2) × (w-2)` interior is diagonalised by the
//! type-I discrete sine transform, so a solve is two forward DSTs, a pointwise
//! division by the Laplacian eigenvalues, and two inverse DSTs. Each DST-I of
//! length `n` is computed from a complex FFT of length `2(n + 1)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// Plans for one frame size; reusable across frames and threads.
pub struct PoissonSolver {
    width: usize,
    height: usize,
    fft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    eig_x: Vec<f64>,
    eig_y: Vec<f64>,
}

impl std::fmt::Debug for PoissonSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSolver")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

fn eigenvalues(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| 2.0 * (PI * k as f64 / (n + 1) as f64).cos() - 2.0)
        .collect()
}

impl PoissonSolver {
    /// Panics if either dimension is below 3 (no interior).
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 3 && height >= 3, "Poisson grid needs an interior");
        let (nx, ny) = (width - 2, height - 2);
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            fft_x: planner.plan_fft_forward(2 * (nx + 1)),
            fft_y: planner.plan_fft_forward(2 * (ny + 1)),
            eig_x: eigenvalues(nx),
            eig_y: eigenvalues(ny),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Solves `∇² z = rhs` (5-point stencil, unit spacing) with `z = 0` on the
    /// outermost rows and columns. Border entries of `rhs` are ignored.
    pub fn solve(&self, rhs: &Grid<f64>) -> Grid<f64> {
        assert_eq!(rhs.dims(), (self.height, self.width));
        let (nx, ny) = (self.width - 2, self.height - 2);

        // interior, row-major ny × nx
        let mut a = Vec::with_capacity(nx * ny);
        for y in 1..=ny {
            a.extend_from_slice(&rhs.row(y)[1..=nx]);
        }

        dst1_rows(&mut a, nx, &self.fft_x);
        let mut t = transpose(&a, ny, nx); // nx × ny
        dst1_rows(&mut t, ny, &self.fft_y);

        for (kx, row) in t.chunks_exact_mut(ny).enumerate() {
            let ex = self.eig_x[kx];
            for (ky, v) in row.iter_mut().enumerate() {
                *v /= ex + self.eig_y[ky];
            }
        }

        dst1_rows(&mut t, ny, &self.fft_y);
        let mut a = transpose(&t, nx, ny);
        dst1_rows(&mut a, nx, &self.fft_x);

        let scale = 4.0 / ((nx + 1) * (ny + 1)) as f64;
        let mut z = Grid::filled(self.width, self.height, 0.0);
        for y in 0..ny {
            for x in 0..nx {
                z[(x + 1, y + 1)] = a[y * nx + x] * scale;
            }
        }
        z
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Unnormalised DST-I of every length-`n` row in place:
/// `y_k = Σ_j x_j sin(π (j+1)(k+1) / (n+1))`.
fn dst1_rows(data: &mut [f64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let m = 2 * (n + 1);
    let rows = data.len() / n;
    let mut buf = vec![Complex::new(0.0, 0.0); m * rows];
    for (row, chunk) in data.chunks_exact(n).zip(buf.chunks_exact_mut(m)) {
        for (j, &v) in row.iter().enumerate() {
            chunk[j + 1] = Complex::new(v, 0.0);
            chunk[m - 1 - j] = Complex::new(-v, 0.0);
        }
    }
    fft.process(&mut buf);
    for (row, chunk) in data.chunks_exact_mut(n).zip(buf.chunks_exact(m)) {
        for (k, v) in row.iter_mut().enumerate() {
            *v = -chunk[k + 1].im / 2.0;
        }
    }
}
