//! Parametric indenters and the rigid-indenter contact model.

use serde::{Deserialize, Serialize};

use crate::frame::{DepthMap, FRAME_HEIGHT, FRAME_WIDTH, GEL_THICKNESS_MM, MM_PER_PX};
use crate::grid::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarOrientation {
    Horizontal,
    Vertical,
    /// 45°, running from the top-left to the bottom-right of the frame.
    Diagonal,
}

impl BarOrientation {
    fn angle_rad(self) -> f64 {
        match self {
            BarOrientation::Horizontal => 0.0,
            BarOrientation::Vertical => std::f64::consts::FRAC_PI_2,
            BarOrientation::Diagonal => std::f64::consts::FRAC_PI_4,
        }
    }
}

/// Indenter geometry. Lengths in millimetres.
///
/// Dot groups sit on a square lattice of pitch `spacing_mm`:
/// a pair is vertical, a triple is a triangle (two on top, one centred below),
/// a quad is a square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere {
        radius_mm: f64,
    },
    Cube {
        edge_mm: f64,
    },
    /// Cylinder lying on its side, axis at `angle_deg` from +x.
    Cylinder {
        radius_mm: f64,
        length_mm: f64,
        angle_deg: f64,
    },
    DotPair {
        dot_radius_mm: f64,
        spacing_mm: f64,
    },
    DotTriple {
        dot_radius_mm: f64,
        spacing_mm: f64,
    },
    DotQuad {
        dot_radius_mm: f64,
        spacing_mm: f64,
    },
    /// Flat-topped bar.
    Bar {
        length_mm: f64,
        width_mm: f64,
        orientation: BarOrientation,
    },
    /// Two parallel flat-topped bars whose centre lines are `pitch_mm` apart.
    BarPair {
        length_mm: f64,
        width_mm: f64,
        pitch_mm: f64,
        orientation: BarOrientation,
    },
    /// Solid central disk plus a concentric flat-topped ring.
    ConcentricRings {
        disk_radius_mm: f64,
        ring_radius_mm: f64,
        ring_width_mm: f64,
    },
}

impl ShapeKind {
    fn sizes(&self) -> Vec<(&'static str, f64)> {
        match *self {
            ShapeKind::Sphere { radius_mm } => vec![("radius_mm", radius_mm)],
            ShapeKind::Cube { edge_mm } => vec![("edge_mm", edge_mm)],
            ShapeKind::Cylinder {
                radius_mm,
                length_mm,
                ..
            } => vec![("radius_mm", radius_mm), ("length_mm", length_mm)],
            ShapeKind::DotPair {
                dot_radius_mm,
                spacing_mm,
            }
            | ShapeKind::DotTriple {
                dot_radius_mm,
                spacing_mm,
            }
            | ShapeKind::DotQuad {
                dot_radius_mm,
                spacing_mm,
            } => vec![("dot_radius_mm", dot_radius_mm), ("spacing_mm", spacing_mm)],
            ShapeKind::Bar {
                length_mm,
                width_mm,
                ..
            } => vec![("length_mm", length_mm), ("width_mm", width_mm)],
            ShapeKind::BarPair {
                length_mm,
                width_mm,
                pitch_mm,
                ..
            } => vec![
                ("length_mm", length_mm),
                ("width_mm", width_mm),
                ("pitch_mm", pitch_mm),
            ],
            ShapeKind::ConcentricRings {
                disk_radius_mm,
                ring_radius_mm,
                ring_width_mm,
            } => vec![
                ("disk_radius_mm", disk_radius_mm),
                ("ring_radius_mm", ring_radius_mm),
                ("ring_width_mm", ring_width_mm),
            ],
        }
    }

    /// Height of the indenter's lower surface above its lowest point at the
    /// in-plane offset `(x, y)` mm from the shape centre. `None` where the
    /// indenter has no material.
    fn gap(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            ShapeKind::Sphere { radius_mm } => cap(radius_mm, x.hypot(y)),
            ShapeKind::Cube { edge_mm } => {
                let h = edge_mm / 2.0;
                (x.abs() <= h && y.abs() <= h).then_some(0.0)
            }
            ShapeKind::Cylinder {
                radius_mm,
                length_mm,
                angle_deg,
            } => {
                let (along, across) = rotate_into(x, y, angle_deg.to_radians());
                if along.abs() > length_mm / 2.0 {
                    return None;
                }
                cap(radius_mm, across)
            }
            ShapeKind::DotPair {
                dot_radius_mm,
                spacing_mm,
            } => dots(&[[0.0, -0.5], [0.0, 0.5]], dot_radius_mm, spacing_mm, x, y),
            ShapeKind::DotTriple {
                dot_radius_mm,
                spacing_mm,
            } => dots(
                &[[-0.5, -0.5], [0.5, -0.5], [0.0, 0.5]],
                dot_radius_mm,
                spacing_mm,
                x,
                y,
            ),
            ShapeKind::DotQuad {
                dot_radius_mm,
                spacing_mm,
            } => dots(
                &[[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5], [0.5, 0.5]],
                dot_radius_mm,
                spacing_mm,
                x,
                y,
            ),
            ShapeKind::Bar {
                length_mm,
                width_mm,
                orientation,
            } => {
                let (along, across) = rotate_into(x, y, orientation.angle_rad());
                (along.abs() <= length_mm / 2.0 && across.abs() <= width_mm / 2.0)
                    .then_some(0.0)
            }
            ShapeKind::BarPair {
                length_mm,
                width_mm,
                pitch_mm,
                orientation,
            } => {
                let (along, across) = rotate_into(x, y, orientation.angle_rad());
                let off = (across.abs() - pitch_mm / 2.0).abs();
                (along.abs() <= length_mm / 2.0 && off <= width_mm / 2.0).then_some(0.0)
            }
            ShapeKind::ConcentricRings {
                disk_radius_mm,
                ring_radius_mm,
                ring_width_mm,
            } => {
                let r = x.hypot(y);
                (r <= disk_radius_mm || (r - ring_radius_mm).abs() <= ring_width_mm / 2.0)
                    .then_some(0.0)
            }
        }
    }
}

fn cap(radius: f64, r: f64) -> Option<f64> {
    (r < radius).then(|| radius - (radius * radius - r * r).sqrt())
}

fn rotate_into(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (x * c + y * s, -x * s + y * c)
}

fn dots(layout: &[[f64; 2]], radius: f64, spacing: f64, x: f64, y: f64) -> Option<f64> {
    layout
        .iter()
        .filter_map(|o| cap(radius, (x - o[0] * spacing).hypot(y - o[1] * spacing)))
        .reduce(f64::min)
}

/// An indenter pressed into the gel at `center_px`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactShape {
    #[serde(flatten)]
    pub kind: ShapeKind,
    pub press_depth_mm: f64,
    pub center_px: [f64; 2],
}

impl ContactShape {
    pub fn new(kind: ShapeKind, press_depth_mm: f64, center_px: [f64; 2]) -> Self {
        Self {
            kind,
            press_depth_mm,
            center_px,
        }
    }

    pub fn sphere(radius_mm: f64, press_depth_mm: f64, center_px: [f64; 2]) -> Self {
        Self::new(ShapeKind::Sphere { radius_mm }, press_depth_mm, center_px)
    }

    pub fn validate(&self, gel: &GelGeometry) -> Result<()> {
        if !(self.press_depth_mm >= 0.0 && self.press_depth_mm <= gel.thickness_mm) {
            return Err(Error::Range {
                what: "press depth (mm)",
                value: self.press_depth_mm,
                min: 0.0,
                max: gel.thickness_mm,
            });
        }
        for (what, v) in self.kind.sizes() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Range {
                    what,
                    value: v,
                    min: f64::MIN_POSITIVE,
                    max: f64::INFINITY,
                });
            }
        }
        Ok(())
    }
}

/// Frame size, scale and elastomer properties of the virtual sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GelGeometry {
    pub width: usize,
    pub height: usize,
    pub mm_per_px: f64,
    pub thickness_mm: f64,
    /// Membrane low-pass width in pixels; 0 disables smoothing.
    pub smoothing_sigma_px: f64,
}

impl Default for GelGeometry {
    fn default() -> Self {
        Self {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            mm_per_px: MM_PER_PX,
            thickness_mm: GEL_THICKNESS_MM,
            smoothing_sigma_px: 4.0,
        }
    }
}

/// Rigid-indenter intersection before membrane smoothing.
pub fn indent(shape: &ContactShape, gel: &GelGeometry) -> Result<DepthMap> {
    shape.validate(gel)?;
    let d = shape.press_depth_mm;
    let [cx, cy] = shape.center_px;
    let z = Grid::from_fn(gel.width, gel.height, |x, y| {
        if d == 0.0 {
            return 0.0;
        }
        let dx = (x as f64 - cx) * gel.mm_per_px;
        let dy = (y as f64 - cy) * gel.mm_per_px;
        shape
            .kind
            .gap(dx, dy)
            .map_or(0.0, |s| (d - s).max(0.0))
    });
    Ok(DepthMap {
        z,
        mm_per_px: gel.mm_per_px,
    })
}

/// Presses `shape` into the gel: rigid intersection followed by a Gaussian
/// membrane low-pass of width `gel.smoothing_sigma_px`.
pub fn press_shape(shape: &ContactShape, gel: &GelGeometry) -> Result<DepthMap> {
    let mut depth = indent(shape, gel)?;
    if gel.smoothing_sigma_px > 0.0 && shape.press_depth_mm > 0.0 {
        depth.z = gaussian_blur(&depth.z, gel.smoothing_sigma_px);
    }
    Ok(depth)
}

/// Separable Gaussian, zero outside the grid, kernel truncated at 4σ.
pub fn gaussian_blur(src: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = (src.width(), src.height());
    let convolve = |get: &dyn Fn(isize) -> f64, n: isize, i: isize| -> f64 {
        kernel
            .iter()
            .enumerate()
            .filter_map(|(k, wgt)| {
                let j = i + k as isize - radius;
                (j >= 0 && j < n).then(|| wgt * get(j))
            })
            .sum()
    };
    let horiz = Grid::from_fn(w, h, |x, y| {
        convolve(&|j| src[(j as usize, y)], w as isize, x as isize)
    });
    Grid::from_fn(w, h, |x, y| {
        convolve(&|j| horiz[(x, j as usize)], h as isize, y as isize)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gel() -> GelGeometry {
        GelGeometry::default()
    }

    #[test]
    fn zero_press_is_flat() {
        let shapes = [
            ShapeKind::Sphere { radius_mm: 4.0 },
            ShapeKind::Cube { edge_mm: 6.0 },
            ShapeKind::DotQuad {
                dot_radius_mm: 1.0,
                spacing_mm: 4.5,
            },
        ];
        for kind in shapes {
            let d = press_shape(&ContactShape::new(kind, 0.0, [160.0, 120.0]), &gel()).unwrap();
            assert!(d.z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn sphere_cap_matches_analytic_geometry() {
        // contact radius sqrt(2 R d - d^2) for R = 4, d = 1
        let expected_r = (2.0f64 * 4.0 * 1.0 - 1.0).sqrt();
        assert!((expected_r - 2.6458).abs() < 1e-4);
        let shape = ContactShape::sphere(4.0, 1.0, [160.0, 120.0]);
        let raw = indent(&shape, &gel()).unwrap();
        assert!((raw.peak() - 1.0).abs() < 1e-12);
        assert_eq!(raw.z[(160, 120)], 1.0);
        for (x, y) in [(160usize, 120usize), (170, 130), (185, 120), (160, 90)] {
            let r = ((x as f64 - 160.0).hypot(y as f64 - 120.0)) * MM_PER_PX;
            let analytic = (1.0 - (4.0 - (16.0 - r * r).sqrt())).max(0.0);
            assert!((raw.z[(x, y)] - analytic).abs() < 1e-12);
        }
        let r_px = expected_r / MM_PER_PX;
        // just inside / outside the contact circle along +x
        assert!(raw.z[(160 + r_px.floor() as usize, 120)] > 0.0);
        assert_eq!(raw.z[(160 + r_px.ceil() as usize, 120)], 0.0);
    }

    #[test]
    fn cube_plateau_covers_edge_square() {
        let shape = ContactShape::new(ShapeKind::Cube { edge_mm: 6.0 }, 0.5, [160.0, 120.0]);
        let raw = indent(&shape, &gel()).unwrap();
        let half = 3.0 / MM_PER_PX; // 40 px
        for y in 0..240 {
            for x in 0..320 {
                let inside = (x as f64 - 160.0).abs() <= half && (y as f64 - 120.0).abs() <= half;
                assert_eq!(raw.z[(x, y)], if inside { 0.5 } else { 0.0 });
            }
        }
    }

    #[test]
    fn over_deep_press_is_rejected() {
        let shape = ContactShape::sphere(4.0, 3.5, [160.0, 120.0]);
        assert!(matches!(press_shape(&shape, &gel()), Err(Error::Range { .. })));
        let bad = ContactShape::sphere(-1.0, 1.0, [160.0, 120.0]);
        assert!(matches!(press_shape(&bad, &gel()), Err(Error::Range { .. })));
    }

    #[test]
    fn blur_preserves_mass_and_smooths() {
        let shape = ContactShape::new(ShapeKind::Cube { edge_mm: 6.0 }, 0.5, [160.0, 120.0]);
        let raw = indent(&shape, &gel()).unwrap();
        let smooth = press_shape(&shape, &gel()).unwrap();
        let m0: f64 = raw.z.iter().sum();
        let m1: f64 = smooth.z.iter().sum();
        assert!((m0 - m1).abs() / m0 < 1e-9);
        // plateau interior untouched, step edge softened
        assert!((smooth.z[(160, 120)] - 0.5).abs() < 1e-9);
        let edge = smooth.z[(200, 120)];
        assert!(edge > 0.2 && edge < 0.35, "edge {edge}");
    }

    #[test]
    fn shape_round_trips_through_json() {
        let s = ContactShape::new(
            ShapeKind::BarPair {
                length_mm: 8.0,
                width_mm: 1.0,
                pitch_mm: 4.5,
                orientation: BarOrientation::Horizontal,
            },
            0.6,
            [160.0, 105.0],
        );
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"kind\":\"bar_pair\""));
        let back: ContactShape = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
