//! Sensor geometry and the frame/depth containers shared by every stage.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::{Error, Result};

/// Frame rows.
pub const FRAME_HEIGHT: usize = 240;
/// Frame columns.
pub const FRAME_WIDTH: usize = 320;
/// 18 mm over 240 rows (equivalently 24 mm over 320 columns).
pub const MM_PER_PX: f64 = 18.0 / 240.0;
/// Elastomer thickness; no indentation or reconstructed depth may exceed it.
pub const GEL_THICKNESS_MM: f64 = 3.0;

/// In-plane rigid motion of the contact, in pixels and degrees.
///
/// Rotation is about a pivot, positive from +x towards +y in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidShear {
    pub dx_px: f64,
    pub dy_px: f64,
    pub dphi_deg: f64,
}

impl RigidShear {
    pub fn new(dx_px: f64, dy_px: f64, dphi_deg: f64) -> Self {
        Self {
            dx_px,
            dy_px,
            dphi_deg,
        }
    }
}

/// Height field `z = f(x, y)` in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub z: Grid<f64>,
    pub mm_per_px: f64,
}

impl DepthMap {
    pub fn zeros(width: usize, height: usize, mm_per_px: f64) -> Self {
        Self {
            z: Grid::filled(width, height, 0.0),
            mm_per_px,
        }
    }

    pub fn width(&self) -> usize {
        self.z.width()
    }

    pub fn height(&self) -> usize {
        self.z.height()
    }

    pub fn peak(&self) -> f64 {
        self.z.max()
    }

    /// Block-averages by `factor` in both directions (remainder rows/cols dropped).
    pub fn downsample(&self, factor: usize) -> Grid<f64> {
        let factor = factor.max(1);
        let w = self.width() / factor;
        let h = self.height() / factor;
        let norm = (factor * factor) as f64;
        Grid::from_fn(w, h, |x, y| {
            let mut s = 0.0;
            for yy in y * factor..(y + 1) * factor {
                for xx in x * factor..(x + 1) * factor {
                    s += self.z[(xx, yy)];
                }
            }
            s / norm
        })
    }

    /// Central-difference gradients in mm/mm. One-sided at the border.
    pub fn gradients(&self) -> (Grid<f64>, Grid<f64>) {
        let (w, h) = (self.width(), self.height());
        let z = &self.z;
        let h2 = 2.0 * self.mm_per_px;
        let gx = Grid::from_fn(w, h, |x, y| {
            if x == 0 {
                (z[(1, y)] - z[(0, y)]) / self.mm_per_px
            } else if x == w - 1 {
                (z[(x, y)] - z[(x - 1, y)]) / self.mm_per_px
            } else {
                (z[(x + 1, y)] - z[(x - 1, y)]) / h2
            }
        });
        let gy = Grid::from_fn(w, h, |x, y| {
            if y == 0 {
                (z[(x, 1)] - z[(x, 0)]) / self.mm_per_px
            } else if y == h - 1 {
                (z[(x, y)] - z[(x, y - 1)]) / self.mm_per_px
            } else {
                (z[(x, y + 1)] - z[(x, y - 1)]) / h2
            }
        });
        (gx, gy)
    }
}

/// Ground truth carried alongside a synthetic frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameTruth {
    pub depth: Option<DepthMap>,
    pub shear: Option<RigidShear>,
    /// Rendered marker centres (rest + displacement).
    pub markers: Option<Vec<[f64; 2]>>,
}

/// RGB tactile image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GelFrame {
    pub pixels: Grid<[f32; 3]>,
    pub mm_per_px: f64,
    pub truth: Option<FrameTruth>,
}

impl GelFrame {
    pub fn new(pixels: Grid<[f32; 3]>, mm_per_px: f64) -> Self {
        Self {
            pixels,
            mm_per_px,
            truth: None,
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    /// Channel-mean grayscale.
    pub fn gray(&self) -> Grid<f64> {
        self.pixels
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
    }

    pub fn truth_depth(&self) -> Option<&DepthMap> {
        self.truth.as_ref().and_then(|t| t.depth.as_ref())
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width() != width || self.height() != height {
            return Err(Error::DimensionMismatch {
                expected: (height, width),
                got: (self.height(), self.width()),
            });
        }
        Ok(())
    }

    /// Quantizes to 8-bit RGB.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let (w, h) = (self.width() as u32, self.height() as u32);
        image::RgbImage::from_fn(w, h, |x, y| {
            let p = self.pixels[(x as usize, y as usize)];
            image::Rgb(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    pub fn from_rgb8(img: &image::RgbImage, mm_per_px: f64) -> Self {
        let pixels = Grid::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            img.get_pixel(x as u32, y as u32).0.map(|c| c as f32 / 255.0)
        });
        Self::new(pixels, mm_per_px)
    }
}
