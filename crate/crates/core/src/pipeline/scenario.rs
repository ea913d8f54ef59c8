//! Scripted simulator scenarios: each is a fixed list of keyframes rendered on demand.

use serde::{Deserialize, Serialize};

use crate::frame::{GelFrame, RigidShear};
use crate::synthgel::{
    concentric_rings, simulate, stimulus_set, ContactShape, GelGeometry, Illumination, MarkerField,
};
use crate::{Error, Result};

pub const SCENARIOS: &[&str] = &[
    "rest",
    "sphere",
    "sphere_shear",
    "concentric_rings",
    "stimuli",
    "scripted",
];

/// One frame of a script: what is pressed, how the markers are sheared, and a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub shape: Option<ContactShape>,
    pub shear: RigidShear,
    pub label: String,
}

impl Keyframe {
    fn rest() -> Self {
        Self {
            shape: None,
            shear: RigidShear::default(),
            label: "rest".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub keyframes: Vec<Keyframe>,
    pub gel: GelGeometry,
    pub lights: Illumination,
    pub field: MarkerField,
}

fn ramp(n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |k| k as f64 / n as f64)
}

fn scaled(shape: &ContactShape, f: f64) -> ContactShape {
    ContactShape {
        press_depth_mm: shape.press_depth_mm * f,
        ..shape.clone()
    }
}

/// Ball of radius 4 mm pressed 1 mm at the frame centre.
pub fn centre_sphere(gel: &GelGeometry) -> ContactShape {
    ContactShape::sphere(4.0, 1.0, [gel.width as f64 / 2.0, gel.height as f64 / 2.0])
}

impl Scenario {
    pub fn by_name(name: &str) -> Result<Self> {
        let gel = GelGeometry::default();
        let sphere = centre_sphere(&gel);
        let mut k = vec![Keyframe::rest()];
        let frame = |shape: Option<ContactShape>, shear: RigidShear, label: &str| Keyframe {
            shape,
            shear,
            label: label.into(),
        };
        match name {
            "rest" => {}
            "sphere" => {
                k.extend(ramp(4).map(|f| frame(Some(scaled(&sphere, f)), RigidShear::default(), "press")));
                k.extend((0..4).map(|_| frame(Some(sphere.clone()), RigidShear::default(), "hold")));
            }
            "sphere_shear" => {
                k.extend(ramp(4).map(|f| frame(Some(scaled(&sphere, f)), RigidShear::default(), "press")));
                k.extend(ramp(5).map(|f| frame(Some(sphere.clone()), RigidShear::new(5.0 * f, 0.0, 0.0), "shear")));
                k.extend((0..3).map(|_| frame(Some(sphere.clone()), RigidShear::new(5.0, 0.0, 0.0), "hold")));
            }
            "concentric_rings" => {
                let rings = concentric_rings(&gel, 0.6);
                k.extend(ramp(3).map(|f| frame(Some(scaled(&rings, f)), RigidShear::default(), "press")));
                k.extend((0..5).map(|_| frame(Some(rings.clone()), RigidShear::default(), "hold")));
            }
            "stimuli" => {
                for (label, shape) in stimulus_set(&gel) {
                    k.extend((0..3).map(|_| frame(Some(shape.clone()), RigidShear::default(), label)));
                    k.push(Keyframe::rest());
                }
            }
            "scripted" => {
                k.extend(ramp(4).map(|f| frame(Some(scaled(&sphere, f)), RigidShear::default(), "press")));
                k.extend(ramp(5).map(|f| frame(Some(sphere.clone()), RigidShear::new(5.0 * f, 0.0, 0.0), "shear")));
                k.extend(ramp(5).map(|f| frame(Some(sphere.clone()), RigidShear::new(5.0, 0.0, 5.0 * f), "rotate")));
                k.extend((0..3).map(|_| frame(Some(sphere.clone()), RigidShear::new(5.0, 0.0, 5.0), "hold")));
            }
            other => return Err(Error::UnknownScenario(other.into())),
        }
        Ok(Self {
            name: name.into(),
            keyframes: k,
            gel,
            lights: Illumination::default(),
            field: MarkerField::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    /// Renders keyframe `i` (wrapping around the script).
    pub fn render(&self, i: usize) -> Result<(GelFrame, &Keyframe)> {
        let kf = &self.keyframes[i % self.keyframes.len()];
        let frame = simulate(kf.shape.as_ref(), kf.shear, &self.gel, &self.lights, &self.field)?;
        Ok((frame, kf))
    }
}
