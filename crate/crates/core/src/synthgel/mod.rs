//! Virtual tactile sensor used as ground truth for every downstream stage.
//!
//! A [`ContactShape`] is pressed into a virtual elastomer ([`press_shape`]),
//! shaded under three coloured lights ([`render_frame`]) and overlaid with a
//! displaceable [`MarkerField`]. Rendered frames carry their truth depth, shear
//! and marker centres so checks never depend on side files.

mod markers;
mod render;
pub mod sequence;
mod shape;

pub use markers::MarkerField;
pub use render::{render_frame, Illumination};
pub use shape::{
    gaussian_blur, indent, press_shape, BarOrientation, ContactShape, GelGeometry, ShapeKind,
};

use crate::frame::{GelFrame, RigidShear};
use crate::Result;

/// One pressed-and-sheared frame.
pub fn simulate(
    shape: Option<&ContactShape>,
    shear: RigidShear,
    gel: &GelGeometry,
    lights: &Illumination,
    field: &MarkerField,
) -> Result<GelFrame> {
    let depth = match shape {
        Some(s) => press_shape(s, gel)?,
        None => crate::frame::DepthMap::zeros(gel.width, gel.height, gel.mm_per_px),
    };
    let moved = field.apply_shear(shear, field.centroid())?;
    render_frame(&depth, &moved, lights)
}

/// Sphere presses of known radius for building a colour-to-gradient table.
/// Frames are rendered without markers.
pub fn calibration_set(gel: &GelGeometry, lights: &Illumination) -> Result<Vec<GelFrame>> {
    let empty = MarkerField::regular(0, 0, 1.0, 1.0, 4.0, gel.width, gel.height);
    let cx = gel.width as f64 / 2.0;
    let cy = gel.height as f64 / 2.0;
    let presses = [
        (3.0, 1.0, [cx - 60.0, cy - 30.0]),
        (4.0, 1.2, [cx + 50.0, cy + 25.0]),
        (5.0, 1.5, [cx, cy]),
        (2.0, 0.8, [cx + 90.0, cy - 50.0]),
        // deep presses of small balls reach the steep slopes of edged shapes
        (1.5, 1.2, [cx - 90.0, cy + 50.0]),
        (2.5, 2.0, [cx + 30.0, cy - 40.0]),
    ];
    presses
        .iter()
        .map(|&(radius, depth, center)| {
            let d = press_shape(&ContactShape::sphere(radius, depth, center), gel)?;
            render_frame(&d, &empty, lights)
        })
        .collect()
}

/// The seven shape stimuli (bars and dot groups), laid out so features fall
/// on the pins of a 30 px sampling grid centred at the frame centre.
pub fn stimulus_set(gel: &GelGeometry) -> Vec<(&'static str, ContactShape)> {
    let cx = gel.width as f64 / 2.0;
    let cy = gel.height as f64 / 2.0;
    let pitch = 30.0 * gel.mm_per_px;
    let bar = |orientation| ShapeKind::Bar {
        length_mm: 8.0,
        width_mm: 1.0,
        orientation,
    };
    vec![
        (
            "horizontal_bar",
            ContactShape::new(bar(BarOrientation::Horizontal), 0.6, [cx, cy - 15.0]),
        ),
        (
            "vertical_bar",
            ContactShape::new(
                ShapeKind::Bar {
                    length_mm: 5.25,
                    width_mm: 1.0,
                    orientation: BarOrientation::Vertical,
                },
                0.6,
                [cx - 15.0, cy],
            ),
        ),
        (
            "two_horizontal_bars",
            ContactShape::new(
                ShapeKind::BarPair {
                    length_mm: 8.0,
                    width_mm: 1.0,
                    pitch_mm: 2.0 * pitch,
                    orientation: BarOrientation::Horizontal,
                },
                0.6,
                [cx, cy - 15.0],
            ),
        ),
        (
            "diagonal_bar",
            ContactShape::new(
                ShapeKind::Bar {
                    length_mm: 11.0,
                    width_mm: 1.0,
                    orientation: BarOrientation::Diagonal,
                },
                0.6,
                [cx, cy],
            ),
        ),
        (
            "two_dots",
            ContactShape::new(
                ShapeKind::DotPair {
                    dot_radius_mm: 1.0,
                    spacing_mm: 2.0 * pitch,
                },
                0.5,
                [cx - 15.0, cy + 15.0],
            ),
        ),
        (
            "three_dots",
            ContactShape::new(
                ShapeKind::DotTriple {
                    dot_radius_mm: 1.0,
                    spacing_mm: 2.0 * pitch,
                },
                0.5,
                [cx + 15.0, cy + 15.0],
            ),
        ),
        (
            "four_dots",
            ContactShape::new(
                ShapeKind::DotQuad {
                    dot_radius_mm: 1.0,
                    spacing_mm: 2.0 * pitch,
                },
                0.5,
                [cx + 15.0, cy + 15.0],
            ),
        ),
    ]
}

/// Disk plus concentric ring separated by a 30 px gap, centred in the frame.
pub fn concentric_rings(gel: &GelGeometry, press_depth_mm: f64) -> ContactShape {
    let px = gel.mm_per_px;
    ContactShape::new(
        ShapeKind::ConcentricRings {
            disk_radius_mm: 24.0 * px,
            ring_radius_mm: 63.0 * px,
            ring_width_mm: 18.0 * px,
        },
        press_depth_mm,
        [gel.width as f64 / 2.0, gel.height as f64 / 2.0],
    )
}
