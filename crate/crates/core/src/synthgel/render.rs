use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MarkerField;
use crate::frame::{DepthMap, FrameTruth, GelFrame};
use crate::grid::Grid;
use crate::{Error, Result};

/// Tri-colour directional lighting parallel to the gel face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    /// In-plane light azimuths for the R, G and B channels.
    pub azimuth_deg: [f64; 3],
    pub elevation_deg: f64,
    pub base: f64,
    pub gain: f64,
    pub marker_intensity: f64,
    /// Additive Gaussian noise; 0 disables.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for Illumination {
    fn default() -> Self {
        Self {
            azimuth_deg: [0.0, 120.0, 240.0],
            elevation_deg: 30.0,
            base: 0.35,
            gain: 0.5,
            marker_intensity: 0.05,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

impl Illumination {
    fn directions(&self) -> [[f64; 3]; 3] {
        let (se, ce) = self.elevation_deg.to_radians().sin_cos();
        self.azimuth_deg.map(|a| {
            let (sa, ca) = a.to_radians().sin_cos();
            [ce * ca, ce * sa, se]
        })
    }

    /// Channel intensities for a surface slope `(gx, gy)` in mm/mm, before clamping.
    ///
    /// The deformed membrane is seen as a height field `z` towards the camera, so its
    /// normal is `(-gx, -gy, 1)`. Each channel is offset so a flat surface reads `base`.
    pub fn shade_unclamped(&self, gx: f64, gy: f64) -> [f64; 3] {
        let norm = (1.0 + gx * gx + gy * gy).sqrt();
        let n = [-gx / norm, -gy / norm, 1.0 / norm];
        self.directions().map(|l| {
            let lambert = n[0] * l[0] + n[1] * l[1] + n[2] * l[2];
            self.base + self.gain * (lambert - l[2])
        })
    }

    pub fn shade(&self, gx: f64, gy: f64) -> [f32; 3] {
        self.shade_unclamped(gx, gy).map(|v| v.clamp(0.0, 1.0) as f32)
    }
}

const SUBSAMPLES: usize = 4;

/// Renders the sensor image for `depth` with the marker field painted on top.
pub fn render_frame(depth: &DepthMap, markers: &MarkerField, lights: &Illumination) -> Result<GelFrame> {
    let (w, h) = (depth.width(), depth.height());
    if markers.frame_width != w || markers.frame_height != h {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            got: (markers.frame_height, markers.frame_width),
        });
    }
    let (gx, gy) = depth.gradients();
    let mut pixels = Grid::from_fn(w, h, |x, y| lights.shade(gx[(x, y)], gy[(x, y)]));

    let positions = markers.positions();
    let r = markers.radius_px;
    let ink = lights.marker_intensity as f32;
    for p in &positions {
        let x0 = ((p[0] - r - 1.0).floor().max(0.0)) as usize;
        let y0 = ((p[1] - r - 1.0).floor().max(0.0)) as usize;
        let x1 = ((p[0] + r + 1.0).ceil() as usize).min(w - 1);
        let y1 = ((p[1] + r + 1.0).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let cov = disk_coverage(x as f64 - p[0], y as f64 - p[1], r);
                if cov > 0.0 {
                    let px = &mut pixels[(x, y)];
                    for c in px.iter_mut() {
                        *c = *c * (1.0 - cov) + ink * cov;
                    }
                }
            }
        }
    }

    if lights.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(lights.noise_seed);
        let normal = Normal::new(0.0, lights.noise_sigma).expect("finite sigma");
        for px in pixels.data_mut() {
            for c in px.iter_mut() {
                *c = (*c + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
        }
    }

    Ok(GelFrame {
        pixels,
        mm_per_px: depth.mm_per_px,
        truth: Some(FrameTruth {
            depth: Some(depth.clone()),
            shear: markers.truth.map(|(s, _)| s),
            markers: Some(positions),
        }),
    })
}

/// Fraction of the unit pixel centred at `(dx, dy)` covered by a disk of radius `r`.
fn disk_coverage(dx: f64, dy: f64, r: f64) -> f32 {
    let d = dx.hypot(dy);
    if d <= r - 0.75 {
        return 1.0;
    }
    if d >= r + 0.75 {
        return 0.0;
    }
    let step = 1.0 / SUBSAMPLES as f64;
    let mut inside = 0;
    for j in 0..SUBSAMPLES {
        for i in 0..SUBSAMPLES {
            let sx = dx - 0.5 + (i as f64 + 0.5) * step;
            let sy = dy - 0.5 + (j as f64 + 0.5) * step;
            if sx * sx + sy * sy <= r * r {
                inside += 1;
            }
        }
    }
    inside as f32 / (SUBSAMPLES * SUBSAMPLES) as f32
}
