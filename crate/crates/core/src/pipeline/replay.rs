//! Offline run over a recorded frame sequence.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{CommandRecord, Pipeline, StageTimings};
use crate::synthgel::sequence::{load_frame, read_index};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// Sleep so ticks follow the recorded frame times.
    pub realtime: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles; all zero for an empty slice.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub ticks: usize,
    /// Frame indices of degraded ticks.
    pub degraded: Vec<usize>,
    pub errors: Vec<String>,
    pub over_budget: usize,
    /// Per-stage timing over non-degraded ticks, keyed by stage name.
    pub timings_ms: Vec<(String, Percentiles)>,
}

impl ReplayReport {
    pub fn stage(&self, name: &str) -> Option<&Percentiles> {
        self.timings_ms.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }
}

/// Ticks every frame of the sequence in `dir`, writing one command record per
/// tick to `log` and, if given, one marker-state line per tick to `dump`.
///
/// An unreadable sidecar is fatal; a frame whose image cannot be decoded is a
/// degraded tick.
pub fn replay(
    dir: impl AsRef<Path>,
    pipeline: &mut Pipeline,
    log: &mut dyn Write,
    mut dump: Option<&mut dyn Write>,
    opts: ReplayOptions,
) -> Result<ReplayReport> {
    let dir = dir.as_ref();
    let records = read_index(dir)?;
    let mut timings: Vec<StageTimings> = Vec::new();
    let mut report = ReplayReport {
        ticks: 0,
        degraded: Vec::new(),
        errors: Vec::new(),
        over_budget: 0,
        timings_ms: Vec::new(),
    };
    let wall = Instant::now();
    let t0 = records.first().and_then(|r| r.t).unwrap_or(0.0);
    for rec in &records {
        if opts.realtime {
            if let Some(t) = rec.t {
                let due = Duration::from_secs_f64((t - t0).max(0.0));
                if let Some(wait) = due.checked_sub(wall.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        let label = rec.label.as_deref();
        let state = match load_frame(dir, rec) {
            Ok(frame) => pipeline.tick(&frame, rec.t, label),
            Err(e) => pipeline.tick_failed(e, rec.t, label),
        };
        report.ticks += 1;
        if state.degraded {
            report.degraded.push(rec.index);
            report
                .errors
                .push(format!("frame {}: {}", rec.index, state.error.as_deref().unwrap_or("")));
        } else {
            timings.push(state.timings);
        }
        report.over_budget += state.over_budget as usize;
        serde_json::to_writer(&mut *log, &CommandRecord::from(&state))?;
        log.write_all(b"\n")?;
        if let Some(d) = dump.as_deref_mut() {
            serde_json::to_writer(&mut *d, &state.markers)?;
            d.write_all(b"\n")?;
        }
    }
    log.flush()?;
    report.timings_ms = StageTimings::NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let v: Vec<f64> = timings.iter().map(|t| t.values()[k]).collect();
            (name.to_string(), Percentiles::of(&v))
        })
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_use_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = Percentiles::of(&v);
        assert_eq!((p.p50, p.p90, p.p99, p.max), (50.0, 90.0, 99.0, 100.0));
        assert_eq!(p.mean, 50.5);
        assert_eq!(Percentiles::of(&[]), Percentiles::default());
        assert_eq!(Percentiles::of(&[3.0]).p99, 3.0);
    }
}
