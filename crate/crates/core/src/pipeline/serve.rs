//! Live loop: frames from a scenario or directory, controls from the stream.

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{CommandRecord, Control, FrameSource, Pipeline, PipelineState, Scenario, SCENARIOS};
use crate::stream::{ServerMessage, StreamServer};
use crate::synthgel::sequence::{load_frame, read_index, SequenceRecord};
use crate::{Error, Result};

pub enum Frames {
    Scenario(Scenario),
    Directory {
        dir: PathBuf,
        records: Vec<SequenceRecord>,
    },
}

/// Feeds frames to a pipeline in a loop and applies runner-level controls.
pub struct Runner {
    pipeline: Pipeline,
    frames: Frames,
    cursor: usize,
    paused: bool,
    steps: usize,
}

impl Runner {
    /// Frame source taken from the pipeline's configuration.
    pub fn new(pipeline: Pipeline) -> Result<Self> {
        let frames = match &pipeline.config().source {
            FrameSource::Scenario { name } => Frames::Scenario(Scenario::by_name(name)?),
            FrameSource::Directory { path } => Frames::Directory {
                records: read_index(path)?,
                dir: path.clone(),
            },
        };
        Ok(Self::with_frames(pipeline, frames))
    }

    pub fn with_frames(pipeline: Pipeline, frames: Frames) -> Self {
        Self {
            pipeline,
            frames,
            cursor: 0,
            paused: false,
            steps: 0,
        }
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn scenario(&self) -> Option<&str> {
        match &self.frames {
            Frames::Scenario(s) => Some(&s.name),
            Frames::Directory { .. } => None,
        }
    }

    /// Applies one control; on error nothing changes.
    pub fn handle(&mut self, control: &Control) -> Result<()> {
        match control {
            Control::Pause => self.paused = true,
            Control::Resume => {
                self.paused = false;
                self.steps = 0;
            }
            Control::Step => self.steps += 1,
            Control::SelectScenario { name } => {
                self.frames = Frames::Scenario(Scenario::by_name(name)?);
                self.cursor = 0;
                self.pipeline.reset_markers();
            }
            grid => self.pipeline.apply(grid)?,
        }
        Ok(())
    }

    /// Ticks the next frame unless paused with no step pending.
    pub fn advance(&mut self) -> Option<PipelineState> {
        if self.paused {
            if self.steps == 0 {
                return None;
            }
            self.steps -= 1;
        }
        let i = self.cursor;
        self.cursor += 1;
        Some(match &self.frames {
            Frames::Scenario(s) => match s.render(i) {
                Ok((frame, kf)) => self.pipeline.tick(&frame, None, Some(&kf.label)),
                Err(e) => self.pipeline.tick_failed(e, None, None),
            },
            Frames::Directory { records, .. } if records.is_empty() => {
                let err = Error::Sequence {
                    frame: 0,
                    reason: "sequence has no frames".into(),
                };
                self.pipeline.tick_failed(err, None, None)
            }
            Frames::Directory { dir, records } => {
                let rec = &records[i % records.len()];
                match load_frame(dir, rec) {
                    Ok(frame) => self.pipeline.tick(&frame, None, rec.label.as_deref()),
                    Err(e) => self.pipeline.tick_failed(e, None, rec.label.as_deref()),
                }
            }
        })
    }

    pub fn hello(&self) -> String {
        ServerMessage::Hello {
            scenarios: SCENARIOS,
            scenario: self.scenario(),
            paused: self.paused,
            grid: self.pipeline.config().grid,
        }
        .to_json()
    }
}

/// Runs until `stop` is set or `max_ticks` frames have been ticked. Controls
/// are drained and applied only between ticks. Returns the number of ticks.
pub fn serve(
    runner: &mut Runner,
    server: &StreamServer,
    mut log: Option<&mut dyn Write>,
    stop: &AtomicBool,
    max_ticks: Option<usize>,
) -> Result<usize> {
    let period = Duration::from_secs_f64(runner.pipeline.config().tick_period_s);
    let mut ticks = 0;
    let mut next = Instant::now();
    while !stop.load(Ordering::Relaxed) && max_ticks.is_none_or(|m| ticks < m) {
        for inbound in server.drain() {
            let reply = match runner.handle(&inbound.msg.control) {
                Ok(()) => ServerMessage::Ack {
                    id: inbound.msg.id,
                    control: &inbound.msg.control,
                    frame: runner.pipeline.frames(),
                }
                .to_json(),
                Err(e) => ServerMessage::Error {
                    id: inbound.msg.id,
                    message: e.to_string(),
                }
                .to_json(),
            };
            server.reply(inbound.client, reply);
        }
        server.set_hello(runner.hello());
        if let Some(state) = runner.advance() {
            let text = ServerMessage::State {
                scenario: runner.scenario(),
                paused: runner.paused,
                state: &state,
            }
            .to_json();
            server.publish(Arc::from(text));
            if let Some(log) = log.as_deref_mut() {
                serde_json::to_writer(&mut *log, &CommandRecord::from(&state))?;
                log.write_all(b"\n")?;
                log.flush()?;
            }
            ticks += 1;
        }
        next += period;
        let now = Instant::now();
        match next.checked_duration_since(now) {
            Some(wait) => std::thread::sleep(wait),
            None => {
                // behind schedule: do not try to catch up with a burst of ticks
                next = now;
                if period.is_zero() || runner.paused {
                    std::thread::sleep(Duration::from_millis(1));
                }
            }
        }
    }
    Ok(ticks)
}
