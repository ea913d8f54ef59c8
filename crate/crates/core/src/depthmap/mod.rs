//! Height-field reconstruction: colour → gradient lookup, marker masking and
//! inpainting, and Poisson integration of the gradient field.

mod lut;
mod poisson;

pub use lut::{calibrate, GradientLut, DEFAULT_BINS};
pub use poisson::PoissonSolver;

use serde::{Deserialize, Serialize};

use crate::frame::{DepthMap, GelFrame};
use crate::grid::{Grid, Integral};
use crate::{Error, Result};

/// Adaptive-threshold parameters for the dark-pixel mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Side of the square local-mean window, pixels (odd).
    pub window_px: usize,
    /// A pixel is dark when it is more than this below its local mean.
    pub offset: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            window_px: 31,
            offset: 0.05,
        }
    }
}

/// Local mean minus grayscale: positive where a pixel is darker than its
/// surroundings. The window is clipped at the frame border.
pub fn darkness(frame: &GelFrame, params: &MaskParams) -> Grid<f64> {
    let gray = frame.gray();
    let integral = Integral::new(&gray);
    let r = params.window_px / 2;
    Grid::from_fn(gray.width(), gray.height(), |x, y| {
        integral.box_mean(x, y, r) - gray[(x, y)]
    })
}

/// `true` where the grayscale image is darker than its local mean by more than
/// `params.offset`.
pub fn marker_mask(frame: &GelFrame, params: &MaskParams) -> Grid<bool> {
    darkness(frame, params).map(|&d| d > params.offset)
}

/// Surface slopes in mm/mm with a validity flag per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: Grid<f64>,
    pub gy: Grid<f64>,
    pub valid: Grid<bool>,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            gx: Grid::filled(width, height, 0.0),
            gy: Grid::filled(width, height, 0.0),
            valid: Grid::filled(width, height, true),
        }
    }

    pub fn from_depth(depth: &DepthMap) -> Self {
        let (gx, gy) = depth.gradients();
        let valid = Grid::filled(depth.width(), depth.height(), true);
        Self { gx, gy, valid }
    }
}

/// Upper bound on fill passes; a marker disk of radius r needs about r passes.
const MAX_FILL_PASSES: usize = 64;

/// Per-pixel table lookup. Masked pixels (grown by one pixel) are flagged invalid
/// and filled from the average of their already-known 8-neighbours, pass by pass
/// inwards from the mask edge.
pub fn infer_gradients(frame: &GelFrame, lut: &GradientLut, mask: &Grid<bool>) -> Result<GradientField> {
    frame.check_dims(mask.width(), mask.height())?;
    let (w, h) = (frame.width(), frame.height());
    let mut gx = Grid::filled(w, h, 0.0);
    let mut gy = Grid::filled(w, h, 0.0);
    for (i, px) in frame.pixels.data().iter().enumerate() {
        let [a, b] = lut.lookup(*px);
        gx.data_mut()[i] = a;
        gy.data_mut()[i] = b;
    }

    let valid = Grid::from_fn(w, h, |x, y| {
        !(-1..=1).any(|dy| (-1..=1).any(|dx| *mask.get(x as isize + dx, y as isize + dy).unwrap_or(&false)))
    });
    inpaint(&mut gx, &mut gy, &valid);
    Ok(GradientField { gx, gy, valid })
}

fn inpaint(gx: &mut Grid<f64>, gy: &mut Grid<f64>, valid: &Grid<bool>) {
    let (w, h) = (valid.width(), valid.height());
    let mut known = valid.clone();
    let mut pending: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !valid[(x, y)])
        .collect();
    let mut updates = Vec::with_capacity(pending.len());

    for _ in 0..MAX_FILL_PASSES {
        if pending.is_empty() {
            break;
        }
        updates.clear();
        pending.retain(|&(x, y)| {
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if *known.get(nx, ny).unwrap_or(&false) {
                        sx += gx[(nx as usize, ny as usize)];
                        sy += gy[(nx as usize, ny as usize)];
                        n += 1;
                    }
                }
            }
            if n > 0 {
                updates.push((x, y, sx / n as f64, sy / n as f64));
                false
            } else {
                true
            }
        });
        if updates.is_empty() {
            break;
        }
        for &(x, y, a, b) in &updates {
            gx[(x, y)] = a;
            gy[(x, y)] = b;
            known[(x, y)] = true;
        }
    }
    for (x, y) in pending {
        gx[(x, y)] = 0.0;
        gy[(x, y)] = 0.0;
    }
}

/// Right-hand side of `∇²z = ∂Gx/∂x + ∂Gy/∂y` in pixel units (central differences).
pub fn divergence(grad: &GradientField, mm_per_px: f64) -> Grid<f64> {
    let (gx, gy) = (&grad.gx, &grad.gy);
    let (w, h) = (gx.width(), gx.height());
    Grid::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
            return 0.0;
        }
        0.5 * mm_per_px
            * (gx[(x + 1, y)] - gx[(x - 1, y)] + gy[(x, y + 1)] - gy[(x, y - 1)])
    })
}

/// Integrates without the final baseline shift; linear in the input.
pub fn integrate_unshifted(
    grad: &GradientField,
    mm_per_px: f64,
    solver: &PoissonSolver,
) -> Result<Grid<f64>> {
    if grad.gx.dims() != grad.gy.dims() {
        return Err(Error::DimensionMismatch {
            expected: grad.gx.dims(),
            got: grad.gy.dims(),
        });
    }
    if grad.gx.iter().chain(grad.gy.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient field"));
    }
    if grad.gx.dims() != (solver.height(), solver.width()) {
        return Err(Error::DimensionMismatch {
            expected: (solver.height(), solver.width()),
            got: grad.gx.dims(),
        });
    }
    Ok(solver.solve(&divergence(grad, mm_per_px)))
}

/// Poisson integration with zero depth on the frame border, shifted so `min z = 0`.
pub fn integrate_with(grad: &GradientField, mm_per_px: f64, solver: &PoissonSolver) -> Result<DepthMap> {
    let mut z = integrate_unshifted(grad, mm_per_px, solver)?;
    let min = z.min();
    z.data_mut().iter_mut().for_each(|v| *v -= min);
    Ok(DepthMap { z, mm_per_px })
}

/// Convenience wrapper planning a solver for this frame size.
pub fn integrate(grad: &GradientField, mm_per_px: f64) -> Result<DepthMap> {
    let solver = PoissonSolver::new(grad.gx.width(), grad.gx.height());
    integrate_with(grad, mm_per_px, &solver)
}
