use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use teletact::depthmap::{calibrate, DEFAULT_BINS};
use teletact::pipeline::{
    replay, serve, FrameSource, Pipeline, PipelineConfig, ReplayOptions, Runner, Scenario,
};
use teletact::stagekin::{fit, reference_calibration, StagePose, TabAngles};
use teletact::stream::StreamServer;
use teletact::synthgel::sequence::SequenceWriter;
use teletact::synthgel::{calibration_set, GelGeometry, Illumination};

#[derive(Parser)]
#[command(name = "teletact", version, about = "Tactile image to pin-display and stage commands")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a colour-to-gradient table from simulated sphere presses.
    Calibrate {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Fit a stage calibration from single-tab samples, or export the reference one.
    FitStage {
        /// JSON array of {"theta":[a,b,c],"pose":{"x_mm":..,"y_mm":..,"phi_deg":..}}.
        #[arg(long, required_unless_present = "reference")]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, conflicts_with = "samples")]
        reference: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the pipeline over a recorded sequence and print a timing report.
    Replay {
        dir: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Command log (JSON lines).
        #[arg(long, default_value = "commands.jsonl")]
        log: PathBuf,
        /// Per-tick marker vectors and trust flags (JSON lines).
        #[arg(long)]
        dump_markers: Option<PathBuf>,
        /// Follow recorded frame times instead of running flat out.
        #[arg(long)]
        realtime: bool,
    },
    /// Stream live state to the operator console and accept controls.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Scenario to play (overrides the configured source).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render a scripted scenario to a sequence directory.
    Simulate {
        scenario: String,
        #[arg(long, short)]
        out: PathBuf,
        /// Seconds between frames.
        #[arg(long, default_value_t = 0.125)]
        period: f64,
        /// Play the script this many times.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    spacing: Option<f64>,
    /// Grid centre as x,y pixels.
    #[arg(long, value_parser = parse_point)]
    center: Option<[f64; 2]>,
    #[arg(long)]
    rotation: Option<f64>,
    #[arg(long)]
    follow_shear: bool,
    /// Write pin and stage controller bytes to these files.
    #[arg(long)]
    pins_out: Option<PathBuf>,
    #[arg(long)]
    stage_out: Option<PathBuf>,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok([p(x)?, p(y)?])
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(g) = self.gain {
            cfg.grid.gain = g;
        }
        if let Some(s) = self.spacing {
            cfg.grid.spacing_px = s;
        }
        if let Some(c) = self.center {
            cfg.grid.center_px = c;
        }
        if let Some(r) = self.rotation {
            cfg.grid.rotation_deg = r;
        }
        cfg.follow_shear |= self.follow_shear;
        Ok(cfg)
    }

    fn pipeline(&self, cfg: PipelineConfig) -> Result<Pipeline> {
        let mut p = Pipeline::new(cfg)?;
        let open = |path: &Option<PathBuf>| -> Result<Box<dyn Write + Send>> {
            Ok(match path {
                Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(std::io::sink()),
            })
        };
        p.set_ports(open(&self.pins_out)?, open(&self.stage_out)?);
        Ok(p)
    }
}

#[derive(Deserialize)]
struct Sample {
    theta: TabAngles,
    pose: StagePose,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Calibrate { out, bins } => {
            let frames = calibration_set(&GelGeometry::default(), &Illumination::default())?;
            let lut = calibrate(&frames, bins, &Default::default())?;
            lut.save(&out)?;
            eprintln!(
                "{} of {} bins populated, written to {}",
                lut.populated_bins(),
                bins * bins * bins,
                out.display()
            );
        }
        Cmd::FitStage {
            samples,
            degree,
            reference,
            out,
        } => {
            let cal = if reference {
                reference_calibration()
            } else {
                let path = samples.expect("clap requires samples without --reference");
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let samples: Vec<Sample> = serde_json::from_str(&text)?;
                let pairs: Vec<_> = samples.into_iter().map(|s| (s.theta, s.pose)).collect();
                fit(&pairs, degree)?
            };
            cal.save(&out)?;
            eprintln!("residual RMS total {:.4}", cal.residuals.total());
        }
        Cmd::Replay {
            dir,
            common,
            log,
            dump_markers,
            realtime,
        } => {
            let mut cfg = common.config()?;
            cfg.source = FrameSource::Directory { path: dir.clone() };
            let mut p = common.pipeline(cfg)?;
            let mut log = BufWriter::new(File::create(&log)?);
            let mut dump = dump_markers.map(File::create).transpose()?.map(BufWriter::new);
            let report = replay(
                &dir,
                &mut p,
                &mut log,
                dump.as_mut().map(|d| d as &mut dyn Write),
                ReplayOptions { realtime },
            )?;
            if let Some(d) = dump.as_mut() {
                d.flush()?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Serve {
            common,
            port,
            host,
            scenario,
            log,
        } => {
            let mut cfg = common.config()?;
            if let Some(name) = scenario {
                cfg.source = FrameSource::Scenario { name };
            }
            let port = port.unwrap_or(cfg.stream_port);
            let mut runner = Runner::new(common.pipeline(cfg)?)?;
            let server = StreamServer::bind((host.as_str(), port), runner.hello())?;
            eprintln!("streaming on ws://{}", server.local_addr());
            let mut log = log.map(File::create).transpose()?.map(BufWriter::new);
            let stop = AtomicBool::new(false);
            serve(&mut runner, &server, log.as_mut().map(|l| l as &mut dyn Write), &stop, None)?;
        }
        Cmd::Simulate {
            scenario,
            out,
            period,
            repeat,
        } => {
            if !(period >= 0.0 && period.is_finite()) {
                bail!("period must be a non-negative number of seconds");
            }
            let s = Scenario::by_name(&scenario)?;
            let mut w = SequenceWriter::create(&out)?;
            for k in 0..s.len() * repeat {
                let (frame, kf) = s.render(k)?;
                w.push(&frame, Some(&kf.label), kf.shape.as_ref(), Some(k as f64 * period))?;
            }
            w.finish()?;
            eprintln!("{} frames written to {}", s.len() * repeat, out.display());
        }
    }
    Ok(())
}
