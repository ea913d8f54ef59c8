//! Depth sampling onto the 6 × 4 pin array, actuator limits, and servo commands.

mod maestro;

pub use maestro::{
    decode, encode_changes, encode_command, encode_multi, CHANNELS, PULSE_MAX_QUS, PULSE_MIN_QUS,
    SET_MULTIPLE, SET_TARGET,
};

use serde::{Deserialize, Serialize};

use crate::frame::DepthMap;
use crate::stagekin::{TabAngles, TABS};
use crate::{Error, Result};

pub const GRID_ROWS: usize = 4;
pub const GRID_COLS: usize = 6;
pub const PINS: usize = GRID_ROWS * GRID_COLS;
/// Pin travel.
pub const MAX_EXTENSION_MM: f64 = 3.0;
/// Pulse for a retracted pin (1000 µs).
pub const PULSE_RETRACTED_QUS: u32 = 4000;
/// Pulse for a fully extended pin (2000 µs).
pub const PULSE_EXTENDED_QUS: u32 = 8000;
/// Extension per pulse count.
pub const EXTENSION_QUANTUM_MM: f64 =
    MAX_EXTENSION_MM / (PULSE_EXTENDED_QUS - PULSE_RETRACTED_QUS) as f64;

/// Steerable lattice of depth-map sample points, one per pin.
///
/// Point `(r, c)` sits at `center + R(rotation) · ((c - 2.5)·s, (r - 1.5)·s)`;
/// rotation is positive from +x towards +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub center_px: [f64; 2],
    pub spacing_px: f64,
    #[serde(default)]
    pub rotation_deg: f64,
    pub gain: f64,
}

impl Default for SamplingGrid {
    fn default() -> Self {
        Self {
            center_px: [160.0, 120.0],
            spacing_px: 30.0,
            rotation_deg: 0.0,
            gain: 1.0,
        }
    }
}

impl SamplingGrid {
    /// Sample points in row-major pin order.
    pub fn points(&self) -> [[f64; 2]; PINS] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        std::array::from_fn(|i| {
            let u = (i % GRID_COLS) as f64 - (GRID_COLS as f64 - 1.0) / 2.0;
            let v = (i / GRID_COLS) as f64 - (GRID_ROWS as f64 - 1.0) / 2.0;
            let (u, v) = (u * self.spacing_px, v * self.spacing_px);
            [
                self.center_px[0] + c * u - s * v,
                self.center_px[1] + s * u + c * v,
            ]
        })
    }

    /// Checks parameters and that every point lies inside a `width × height` frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.spacing_px > 0.0 && self.spacing_px.is_finite()) {
            return Err(Error::Config(format!("grid spacing {} must be positive", self.spacing_px)));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("gain {} must be positive", self.gain)));
        }
        if !self.rotation_deg.is_finite() || !self.center_px.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sampling grid"));
        }
        let (xmax, ymax) = (width as f64 - 1.0, height as f64 - 1.0);
        for (index, [x, y]) in self.points().into_iter().enumerate() {
            if !(0.0..=xmax).contains(&x) || !(0.0..=ymax).contains(&y) {
                return Err(Error::GridOutOfFrame { index, x, y });
            }
        }
        Ok(())
    }
}

/// Bilinear depth (mm) at every grid point, row-major.
pub fn sample(depth: &DepthMap, grid: &SamplingGrid) -> Result<[f64; PINS]> {
    grid.validate(depth.width(), depth.height())?;
    let pts = grid.points();
    Ok(std::array::from_fn(|i| {
        depth
            .z
            .bilinear(pts[i][0], pts[i][1])
            .expect("validated points are inside the frame")
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinTargets {
    pub extension_mm: [f64; PINS],
    /// Nominal pulse per pin before any channel inversion.
    pub pulse_qus: [u32; PINS],
}

impl Default for PinTargets {
    fn default() -> Self {
        Self {
            extension_mm: [0.0; PINS],
            pulse_qus: [PULSE_RETRACTED_QUS; PINS],
        }
    }
}

pub fn extension_to_pulse(extension_mm: f64) -> u32 {
    let span = (PULSE_EXTENDED_QUS - PULSE_RETRACTED_QUS) as f64;
    (PULSE_RETRACTED_QUS as f64 + span * extension_mm / MAX_EXTENSION_MM).round() as u32
}

/// `extension = clamp(gain · depth, 0, 3 mm)`, mapped linearly onto 1000–2000 µs.
pub fn to_targets(depths: &[f64; PINS], gain: f64) -> Result<PinTargets> {
    if depths.iter().any(|d| !d.is_finite()) || !gain.is_finite() {
        return Err(Error::NonFinite("sampled depths"));
    }
    let extension_mm = depths.map(|d| (gain * d).clamp(0.0, MAX_EXTENSION_MM));
    Ok(PinTargets {
        extension_mm,
        pulse_qus: extension_mm.map(extension_to_pulse),
    })
}

/// Pin-to-channel routing. `channel[pin]` is the controller channel driving that
/// pin; `inverted[pin]` mirrors its pulse about the centre of the travel range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub channel: [usize; PINS],
    #[serde(default)]
    pub inverted: [bool; PINS],
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self {
            channel: std::array::from_fn(|i| i),
            inverted: [false; PINS],
        }
    }
}

impl ChannelMap {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; CHANNELS];
        for &ch in &self.channel {
            if ch >= CHANNELS {
                return Err(Error::Channel(ch));
            }
            if std::mem::replace(&mut seen[ch], true) {
                return Err(Error::Config(format!("channel {ch} assigned to two pins")));
            }
        }
        Ok(())
    }

    /// Pulse for each controller channel.
    pub fn route(&self, targets: &PinTargets) -> [u32; CHANNELS] {
        let mut out = [PULSE_RETRACTED_QUS; CHANNELS];
        for pin in 0..PINS {
            let p = targets.pulse_qus[pin];
            out[self.channel[pin]] = if self.inverted[pin] {
                PULSE_RETRACTED_QUS + PULSE_EXTENDED_QUS - p
            } else {
                p
            };
        }
        out
    }
}

/// Stage servo pulse: θ = 0 at 1500 µs, ±1 at ±500 µs.
pub fn stage_pulses(theta: &TabAngles) -> [u32; TABS] {
    theta.theta().map(|t| (6000.0 + 2000.0 * t).round() as u32)
}

/// Set-Target frames for the stage controller, channels 0..3.
pub fn encode_stage(theta: &TabAngles) -> Vec<u8> {
    stage_pulses(theta)
        .iter()
        .enumerate()
        .flat_map(|(ch, &p)| encode_command(ch, p).expect("stage pulses are within bounds"))
        .collect()
}

/// Rate-limited model of the physical pin display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinDisplayModel {
    pub extension_mm: [f64; PINS],
    pub slew_mm_per_s: f64,
    pub pitch_mm: f64,
    pub footprint_mm: [f64; 2],
}

impl Default for PinDisplayModel {
    fn default() -> Self {
        Self {
            extension_mm: [0.0; PINS],
            slew_mm_per_s: 15.0,
            pitch_mm: 2.6,
            footprint_mm: [15.0, 10.0],
        }
    }
}

impl PinDisplayModel {
    /// Advances every pin towards its target by at most `slew · dt`. Returns which
    /// pins sit on their (clamped) target afterwards.
    pub fn step_display(&mut self, targets: &PinTargets, dt: f64) -> [bool; PINS] {
        let max_step = if dt > 0.0 { self.slew_mm_per_s * dt } else { 0.0 };
        std::array::from_fn(|i| {
            let goal = targets.extension_mm[i];
            let goal = if goal.is_finite() {
                goal.clamp(0.0, MAX_EXTENSION_MM)
            } else {
                self.extension_mm[i]
            };
            let gap = goal - self.extension_mm[i];
            // snap when the remaining gap is within float noise of one step
            self.extension_mm[i] = if gap.abs() <= max_step * (1.0 + 1e-12) {
                goal
            } else {
                self.extension_mm[i] + max_step.copysign(gap)
            }
            .clamp(0.0, MAX_EXTENSION_MM);
            self.extension_mm[i] == goal
        })
    }

    pub fn peak(&self) -> f64 {
        self.extension_mm.iter().cloned().fold(0.0, f64::max)
    }
}
