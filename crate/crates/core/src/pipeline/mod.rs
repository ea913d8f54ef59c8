//! Per-frame loop from tactile image to pin and stage commands.
//!
//! A tick runs mask → track → correct → gradients → integrate → shear → stage
//! IK → sample → targets → encode. Everything is computed before anything is
//! committed, so a failing stage leaves the previous commands in force and no
//! bytes go out for that tick.

mod control;
mod replay;
mod scenario;
mod serve;

pub use control::{Control, ControlMessage};
pub use replay::{replay, Percentiles, ReplayOptions, ReplayReport};
pub use scenario::{centre_sphere, Keyframe, Scenario, SCENARIOS};
pub use serve::{serve, Frames, Runner};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::actuation::{
    encode_changes, sample, stage_pulses, to_targets, ChannelMap, PinDisplayModel, PinTargets,
    SamplingGrid, CHANNELS, PINS,
};
use crate::depthmap::{
    calibrate, darkness, infer_gradients, integrate_with, GradientLut, PoissonSolver, DEFAULT_BINS,
};
use crate::frame::{GelFrame, FRAME_HEIGHT, FRAME_WIDTH, MM_PER_PX};
use crate::markers::{correct, init_markers, track_weights, CorrectionThresholds, MarkerState};
use crate::shear::{estimate, ShearEstimate};
use crate::stagekin::{
    reference_calibration, solve_ik_with, IkParams, StageCalibration, StagePose, TabAngles, TABS,
};
use crate::synthgel::{calibration_set, GelGeometry, Illumination};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameSource {
    Directory { path: PathBuf },
    Scenario { name: String },
}

impl Default for FrameSource {
    fn default() -> Self {
        Self::Scenario {
            name: "sphere".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: FrameSource,
    /// Gradient table; synthesized from simulator presses when absent.
    pub lut_path: Option<PathBuf>,
    /// Stage calibration; the reference calibration when absent.
    pub calibration_path: Option<PathBuf>,
    pub thresholds: CorrectionThresholds,
    /// Initial sampling grid, gain included.
    pub grid: SamplingGrid,
    pub marker_rows: usize,
    pub marker_cols: usize,
    pub tick_budget_ms: f64,
    /// Nominal tick spacing; also the display-model step when frames carry no time.
    pub tick_period_s: f64,
    pub stream_port: u16,
    /// Move the sampling grid with the estimated shear translation.
    pub follow_shear: bool,
    pub channel_map: ChannelMap,
    pub multi_target: bool,
    pub ik: IkParams,
    /// Block size of the depth preview in streamed snapshots.
    pub preview_factor: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: FrameSource::default(),
            lut_path: None,
            calibration_path: None,
            thresholds: CorrectionThresholds::default(),
            grid: SamplingGrid::default(),
            marker_rows: 8,
            marker_cols: 10,
            tick_budget_ms: 125.0,
            tick_period_s: 0.125,
            stream_port: 8765,
            follow_shear: false,
            channel_map: ChannelMap::default(),
            multi_target: true,
            ik: IkParams::default(),
            preview_factor: 4,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tick_budget_ms > 0.0 && self.tick_budget_ms.is_finite()) {
            return Err(Error::Config(format!("tick budget {} ms must be positive", self.tick_budget_ms)));
        }
        if !(self.tick_period_s >= 0.0 && self.tick_period_s.is_finite()) {
            return Err(Error::Config(format!("tick period {} s must be non-negative", self.tick_period_s)));
        }
        if self.marker_rows == 0 || self.marker_cols == 0 {
            return Err(Error::Config("marker grid must be non-empty".into()));
        }
        if self.preview_factor == 0 {
            return Err(Error::Config("preview factor must be at least 1".into()));
        }
        for p in self.lut_path.iter().chain(&self.calibration_path) {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if let FrameSource::Directory { path } = &self.source {
            if !path.is_dir() {
                return Err(Error::Config(format!("{} is not a directory", path.display())));
            }
        }
        if let FrameSource::Scenario { name } = &self.source {
            if !SCENARIOS.contains(&name.as_str()) {
                return Err(Error::UnknownScenario(name.clone()));
            }
        }
        self.thresholds.validate()?;
        self.channel_map.validate()?;
        self.grid.validate(FRAME_WIDTH, FRAME_HEIGHT)
    }
}

/// Gradient table built from the simulator's sphere presses.
pub fn synthetic_lut(mask: &crate::depthmap::MaskParams) -> Result<GradientLut> {
    let frames = calibration_set(&GelGeometry::default(), &Illumination::default())?;
    calibrate(&frames, DEFAULT_BINS, mask)
}

/// Wall time of each stage in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub mask: f64,
    pub track: f64,
    pub correct: f64,
    pub gradients: f64,
    pub integrate: f64,
    pub shear: f64,
    pub ik: f64,
    pub sample: f64,
    pub encode: f64,
    pub total: f64,
}

impl StageTimings {
    pub const NAMES: [&'static str; 10] = [
        "mask", "track", "correct", "gradients", "integrate", "shear", "ik", "sample", "encode",
        "total",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.mask,
            self.track,
            self.correct,
            self.gradients,
            self.integrate,
            self.shear,
            self.ik,
            self.sample,
            self.encode,
            self.total,
        ]
    }
}

/// Block-averaged depth for streaming, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPreview {
    pub width: usize,
    pub height: usize,
    /// Source pixels per preview cell along each axis.
    pub factor: usize,
    pub z_mm: Vec<f64>,
}

/// Downsampled camera frame as base64 RGB8, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePreview {
    pub width: usize,
    pub height: usize,
    pub factor: usize,
    pub rgb_base64: String,
}

impl FramePreview {
    fn new(frame: &GelFrame, factor: usize) -> Self {
        let (w, h) = (frame.width() / factor, frame.height() / factor);
        let mut bytes = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let p = frame.pixels[(x * factor + factor / 2, y * factor + factor / 2)];
                bytes.extend(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            }
        }
        Self {
            width: w,
            height: h,
            factor,
            rgb_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSummary {
    pub rows: usize,
    pub cols: usize,
    pub rest: Vec<[f64; 2]>,
    pub vecs: Vec<[f64; 2]>,
    pub trust: Vec<bool>,
    pub trusted: usize,
}

impl From<&MarkerState> for MarkerSummary {
    fn from(s: &MarkerState) -> Self {
        Self {
            rows: s.rows,
            cols: s.cols,
            rest: s.rest.clone(),
            vecs: s.vecs(),
            trust: s.trust.clone(),
            trusted: s.trusted_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    /// Pose requested from the shear estimate.
    pub target: StagePose,
    /// Forward-kinematics pose of the commanded angles.
    pub pose: StagePose,
    pub theta: TabAngles,
    pub pulses_qus: [u32; TABS],
    /// The target was outside the workspace and the closest reachable pose is used.
    pub saturated: bool,
}

/// Everything the operator console shows for one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub frame: usize,
    pub t: f64,
    pub label: Option<String>,
    pub degraded: bool,
    pub error: Option<String>,
    pub depth: Option<DepthPreview>,
    pub image: Option<FramePreview>,
    pub markers: Option<MarkerSummary>,
    pub shear: Option<ShearEstimate>,
    /// Grid in force this tick (shifted by the shear when following).
    pub grid: SamplingGrid,
    pub grid_points: Vec<[f64; 2]>,
    /// Depth under each pin, row-major; held from the last good tick when degraded.
    pub sampled_depth_mm: [f64; PINS],
    pub targets: PinTargets,
    pub stage: StageSummary,
    /// Modelled pin extensions after slew limiting.
    pub display_mm: [f64; PINS],
    pub bytes_hex: String,
    pub stage_bytes_hex: String,
    pub timings: StageTimings,
    pub over_budget: bool,
    pub warnings: Vec<String>,
}

/// One line of the command log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub t: f64,
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Nominal pulse per pin (quarter-µs).
    pub targets: [u32; PINS],
    pub extension_mm: [f64; PINS],
    pub theta: TabAngles,
    pub bytes: String,
    pub stage_bytes: String,
}

impl From<&PipelineState> for CommandRecord {
    fn from(s: &PipelineState) -> Self {
        Self {
            t: s.t,
            frame: s.frame,
            label: s.label.clone(),
            degraded: s.degraded,
            error: s.error.clone(),
            targets: s.targets.pulse_qus,
            extension_mm: s.targets.extension_mm,
            theta: s.stage.theta,
            bytes: s.bytes_hex.clone(),
            stage_bytes: s.stage_bytes_hex.clone(),
        }
    }
}

/// Commands in force after the last good tick.
#[derive(Debug, Clone)]
struct Committed {
    sampled: [f64; PINS],
    targets: PinTargets,
    channels: Option<[u32; CHANNELS]>,
    stage: StageSummary,
}

impl Default for Committed {
    fn default() -> Self {
        let theta = TabAngles::ZERO;
        Self {
            sampled: [0.0; PINS],
            targets: PinTargets::default(),
            channels: None,
            stage: StageSummary {
                target: StagePose::default(),
                pose: StagePose::default(),
                theta,
                pulses_qus: stage_pulses(&theta),
                saturated: false,
            },
        }
    }
}

struct Outcome {
    markers: MarkerState,
    depth: crate::frame::DepthMap,
    shear: ShearEstimate,
    grid: SamplingGrid,
    committed: Committed,
    bytes: Vec<u8>,
    stage_bytes: Vec<u8>,
    warnings: Vec<String>,
}

fn ms_since(t: &mut Instant) -> f64 {
    let now = Instant::now();
    let ms = (now - *t).as_secs_f64() * 1e3;
    *t = now;
    ms
}

/// Owns every piece of mutable loop state: tracked markers, committed commands,
/// the display model and the two servo byte sinks.
pub struct Pipeline {
    cfg: PipelineConfig,
    lut: GradientLut,
    stage_cal: StageCalibration,
    solver: PoissonSolver,
    markers: Option<MarkerState>,
    depth: Option<crate::frame::DepthMap>,
    committed: Committed,
    display: PinDisplayModel,
    last_t: Option<f64>,
    frames: usize,
    pins_port: Box<dyn Write + Send>,
    stage_port: Box<dyn Write + Send>,
}

impl Pipeline {
    /// Loads (or synthesizes) the gradient table and stage calibration named in `cfg`.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let lut = match &cfg.lut_path {
            Some(p) => GradientLut::load(p)?,
            None => synthetic_lut(&cfg.thresholds.mask)?,
        };
        let stage_cal = match &cfg.calibration_path {
            Some(p) => StageCalibration::load(p)?,
            None => reference_calibration(),
        };
        Self::with_parts(cfg, lut, stage_cal)
    }

    pub fn with_parts(cfg: PipelineConfig, lut: GradientLut, stage_cal: StageCalibration) -> Result<Self> {
        cfg.validate()?;
        stage_cal.validate()?;
        Ok(Self {
            cfg,
            lut,
            stage_cal,
            solver: PoissonSolver::new(FRAME_WIDTH, FRAME_HEIGHT),
            markers: None,
            depth: None,
            committed: Committed::default(),
            display: PinDisplayModel::default(),
            last_t: None,
            frames: 0,
            pins_port: Box::new(std::io::sink()),
            stage_port: Box::new(std::io::sink()),
        })
    }

    /// Byte sinks for the pin controller and the stage controller.
    pub fn set_ports(&mut self, pins: Box<dyn Write + Send>, stage: Box<dyn Write + Send>) {
        self.pins_port = pins;
        self.stage_port = stage;
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn lut(&self) -> &GradientLut {
        &self.lut
    }

    pub fn stage_calibration(&self) -> &StageCalibration {
        &self.stage_cal
    }

    pub fn markers(&self) -> Option<&MarkerState> {
        self.markers.as_ref()
    }

    /// Full-resolution depth of the last good tick.
    pub fn depth(&self) -> Option<&crate::frame::DepthMap> {
        self.depth.as_ref()
    }

    pub fn display(&self) -> &PinDisplayModel {
        &self.display
    }

    /// Frames ticked so far.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Drops the tracked markers; the next frame re-detects them at rest.
    pub fn reset_markers(&mut self) {
        self.markers = None;
    }

    /// Applies a grid or gain change. Nothing changes unless the whole new grid is valid.
    pub fn apply(&mut self, control: &Control) -> Result<()> {
        let mut grid = self.cfg.grid;
        match *control {
            Control::SetGridCenter { x, y } => grid.center_px = [x, y],
            Control::SetSpacing { px } => grid.spacing_px = px,
            Control::SetRotation { deg } => grid.rotation_deg = deg,
            Control::SetGain { gain } => grid.gain = gain,
            _ => {
                return Err(Error::Config(format!(
                    "{} is handled by the frame runner",
                    control.name()
                )))
            }
        }
        grid.validate(FRAME_WIDTH, FRAME_HEIGHT)?;
        self.cfg.grid = grid;
        Ok(())
    }

    /// Runs one frame. `t` is the frame time in seconds (tick count × period when `None`).
    pub fn tick(&mut self, frame: &GelFrame, t: Option<f64>, label: Option<&str>) -> PipelineState {
        let start = Instant::now();
        let mut timings = StageTimings::default();
        let result = self.process(frame, &mut timings);
        timings.total = start.elapsed().as_secs_f64() * 1e3;
        let t = self.advance_clock(t);
        match result {
            Ok(out) => self.commit(out, frame, t, label, timings),
            Err(e) => self.degrade(e, t, label, timings),
        }
    }

    /// Records a tick whose frame could not be obtained at all.
    pub fn tick_failed(&mut self, err: Error, t: Option<f64>, label: Option<&str>) -> PipelineState {
        let t = self.advance_clock(t);
        self.degrade(err, t, label, StageTimings::default())
    }

    fn advance_clock(&mut self, t: Option<f64>) -> f64 {
        let t = t.unwrap_or(self.frames as f64 * self.cfg.tick_period_s);
        let dt = match self.last_t {
            Some(prev) => t - prev,
            None => self.cfg.tick_period_s,
        };
        self.last_t = Some(t);
        self.frames += 1;
        // display slews towards the commands in force before this tick
        self.display.step_display(&self.committed.targets, dt);
        t
    }

    fn process(&self, frame: &GelFrame, tm: &mut StageTimings) -> Result<Outcome> {
        frame.check_dims(self.solver.width(), self.solver.height())?;
        let th = &self.cfg.thresholds;
        let mut clock = Instant::now();
        let dark = darkness(frame, &th.mask);
        let mask = dark.map(|&d| d > th.mask.offset);
        let weights = dark.map(|&d| (d - th.mask.offset).max(0.0));
        tm.mask = ms_since(&mut clock);

        let tracked = match &self.markers {
            Some(prev) => track_weights(&weights, prev, th),
            None => init_markers(frame, self.cfg.marker_rows, self.cfg.marker_cols, th)?,
        };
        tm.track = ms_since(&mut clock);
        let markers = correct(&tracked, &mask, th)?;
        tm.correct = ms_since(&mut clock);

        let grad = infer_gradients(frame, &self.lut, &mask)?;
        tm.gradients = ms_since(&mut clock);
        let depth = integrate_with(&grad, frame.mm_per_px, &self.solver)?;
        tm.integrate = ms_since(&mut clock);

        let shear = estimate(&markers, None)?;
        tm.shear = ms_since(&mut clock);

        let mut warnings = Vec::new();
        let target = StagePose::new(shear.dx_px * MM_PER_PX, shear.dy_px * MM_PER_PX, shear.dphi_deg);
        let seed = self.committed.stage.theta;
        let (theta, saturated) = match solve_ik_with(&target, &self.stage_cal, seed, &self.cfg.ik) {
            Ok(sol) => (sol.theta, false),
            Err(Error::Workspace {
                best,
                translation_mm,
                rotation_deg,
            }) => {
                warnings.push(format!(
                    "stage saturated: {translation_mm:.3} mm / {rotation_deg:.2} deg short of target"
                ));
                (best, true)
            }
            Err(e) => return Err(e),
        };
        let pose = crate::stagekin::forward(&theta, &self.stage_cal);
        tm.ik = ms_since(&mut clock);

        let mut grid = self.cfg.grid;
        if self.cfg.follow_shear {
            grid.center_px[0] += shear.dx_px;
            grid.center_px[1] += shear.dy_px;
        }
        let sampled = sample(&depth, &grid)?;
        let targets = to_targets(&sampled, grid.gain)?;
        tm.sample = ms_since(&mut clock);

        let channels = self.cfg.channel_map.route(&targets);
        let bytes = encode_changes(&channels, self.committed.channels.as_ref(), self.cfg.multi_target)?;
        let pulses = stage_pulses(&theta);
        let stage_bytes = if self.committed.channels.is_none() || pulses != self.committed.stage.pulses_qus {
            crate::actuation::encode_stage(&theta)
        } else {
            Vec::new()
        };
        tm.encode = ms_since(&mut clock);

        Ok(Outcome {
            markers,
            depth,
            shear,
            grid,
            committed: Committed {
                sampled,
                targets,
                channels: Some(channels),
                stage: StageSummary {
                    target,
                    pose,
                    theta,
                    pulses_qus: pulses,
                    saturated,
                },
            },
            bytes,
            stage_bytes,
            warnings,
        })
    }

    fn commit(
        &mut self,
        out: Outcome,
        frame: &GelFrame,
        t: f64,
        label: Option<&str>,
        timings: StageTimings,
    ) -> PipelineState {
        let mut warnings = out.warnings;
        for (port, bytes, name) in [
            (&mut self.pins_port, &out.bytes, "pin"),
            (&mut self.stage_port, &out.stage_bytes, "stage"),
        ] {
            if let Err(e) = port.write_all(bytes).and_then(|_| port.flush()) {
                warnings.push(format!("{name} port write failed: {e}"));
            }
        }
        let over_budget = timings.total > self.cfg.tick_budget_ms;
        if over_budget {
            warnings.push(format!("tick took {:.1} ms", timings.total));
        }
        self.committed = out.committed;
        let summary = MarkerSummary::from(&out.markers);
        self.markers = Some(out.markers);
        let f = self.cfg.preview_factor;
        let z = out.depth.downsample(f);
        self.depth = Some(out.depth);
        PipelineState {
            frame: self.frames - 1,
            t,
            label: label.map(str::to_owned),
            degraded: false,
            error: None,
            depth: Some(DepthPreview {
                width: z.width(),
                height: z.height(),
                factor: f,
                z_mm: z.into_vec(),
            }),
            image: Some(FramePreview::new(frame, f)),
            markers: Some(summary),
            shear: Some(out.shear),
            grid: out.grid,
            grid_points: out.grid.points().to_vec(),
            sampled_depth_mm: self.committed.sampled,
            targets: self.committed.targets,
            stage: self.committed.stage,
            display_mm: self.display.extension_mm,
            bytes_hex: hex::encode(&out.bytes),
            stage_bytes_hex: hex::encode(&out.stage_bytes),
            timings,
            over_budget,
            warnings,
        }
    }

    fn degrade(&mut self, err: Error, t: f64, label: Option<&str>, timings: StageTimings) -> PipelineState {
        let grid = self.cfg.grid;
        PipelineState {
            frame: self.frames - 1,
            t,
            label: label.map(str::to_owned),
            degraded: true,
            error: Some(err.to_string()),
            depth: None,
            image: None,
            markers: self.markers.as_ref().map(MarkerSummary::from),
            shear: None,
            grid,
            grid_points: grid.points().to_vec(),
            sampled_depth_mm: self.committed.sampled,
            targets: self.committed.targets,
            stage: self.committed.stage,
            display_mm: self.display.extension_mm,
            bytes_hex: String::new(),
            stage_bytes_hex: String::new(),
            timings,
            over_budget: false,
            warnings: vec!["pins held at last good command".into()],
        }
    }
}
