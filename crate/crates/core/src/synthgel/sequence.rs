//! On-disk frame sequences: numbered PNGs plus a `sequence.jsonl` sidecar.
//!
//! Each sidecar line describes one frame:
//!
//! ```json
//! {"index":0,"frame":"frame_00000.png","t":0.0,"label":"sphere",
//!  "shape":{"kind":"sphere","radius_mm":4.0,"press_depth_mm":1.0,"center_px":[160.0,120.0]},
//!  "shear":{"dx_px":5.0,"dy_px":0.0,"dphi_deg":0.0},"depth":"depth_00000.zmap"}
//! ```
//!
//! Truth depth files are `FZMAP1`, then `u32` width, `u32` height, `f64` mm/px,
//! then `width × height` little-endian `f32` values in row-major order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ContactShape;
use crate::frame::{DepthMap, FrameTruth, GelFrame, RigidShear, MM_PER_PX};
use crate::grid::Grid;
use crate::{Error, Result};

pub const SIDECAR: &str = "sequence.jsonl";
const ZMAP_MAGIC: &[u8; 6] = b"FZMAP1";

fn default_mm_per_px() -> f64 {
    MM_PER_PX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub index: usize,
    pub frame: String,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub shape: Option<ContactShape>,
    #[serde(default)]
    pub shear: Option<RigidShear>,
    #[serde(default)]
    pub depth: Option<String>,
    #[serde(default = "default_mm_per_px")]
    pub mm_per_px: f64,
}

/// Appends frames to a sequence directory.
pub struct SequenceWriter {
    dir: PathBuf,
    sidecar: BufWriter<File>,
    next: usize,
}

impl SequenceWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let sidecar = BufWriter::new(File::create(dir.join(SIDECAR))?);
        Ok(Self {
            dir,
            sidecar,
            next: 0,
        })
    }

    pub fn push(
        &mut self,
        frame: &GelFrame,
        label: Option<&str>,
        shape: Option<&ContactShape>,
        t: Option<f64>,
    ) -> Result<SequenceRecord> {
        let index = self.next;
        let name = format!("frame_{index:05}.png");
        frame.to_rgb8().save(self.dir.join(&name))?;
        let depth = match frame.truth_depth() {
            Some(d) => {
                let dname = format!("depth_{index:05}.zmap");
                write_depth(self.dir.join(&dname), d)?;
                Some(dname)
            }
            None => None,
        };
        let record = SequenceRecord {
            index,
            frame: name,
            t,
            label: label.map(str::to_owned),
            shape: shape.cloned(),
            shear: frame.truth.as_ref().and_then(|t| t.shear),
            depth,
            mm_per_px: frame.mm_per_px,
        };
        serde_json::to_writer(&mut self.sidecar, &record)?;
        self.sidecar.write_all(b"\n")?;
        self.next += 1;
        Ok(record)
    }

    pub fn finish(mut self) -> Result<()> {
        self.sidecar.flush()?;
        Ok(())
    }
}

/// Parses the sidecar. Any unreadable line fails naming the frame it describes.
pub fn read_index(dir: impl AsRef<Path>) -> Result<Vec<SequenceRecord>> {
    let path = dir.as_ref().join(SIDECAR);
    let file = File::open(&path).map_err(|e| Error::Sequence {
        frame: 0,
        reason: format!("{}: {e}", path.display()),
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord = serde_json::from_str(&line).map_err(|e| Error::Sequence {
            frame: i,
            reason: e.to_string(),
        })?;
        if rec.index != records.len() {
            return Err(Error::Sequence {
                frame: i,
                reason: format!("index {} out of order", rec.index),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

/// Loads the image (and truth, if recorded) for one sidecar record.
pub fn load_frame(dir: impl AsRef<Path>, rec: &SequenceRecord) -> Result<GelFrame> {
    let dir = dir.as_ref();
    let img = image::open(dir.join(&rec.frame))?.to_rgb8();
    let mut frame = GelFrame::from_rgb8(&img, rec.mm_per_px);
    let depth = rec
        .depth
        .as_ref()
        .map(|d| read_depth(dir.join(d)))
        .transpose()?;
    if depth.is_some() || rec.shear.is_some() {
        frame.truth = Some(FrameTruth {
            depth,
            shear: rec.shear,
            markers: None,
        });
    }
    Ok(frame)
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(ZMAP_MAGIC)?;
    out.write_all(&(depth.width() as u32).to_le_bytes())?;
    out.write_all(&(depth.height() as u32).to_le_bytes())?;
    out.write_all(&depth.mm_per_px.to_le_bytes())?;
    for v in depth.z.iter() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 22 || &bytes[..6] != ZMAP_MAGIC {
        return Err(Error::Format("missing FZMAP1 header".into()));
    }
    let w = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let mm_per_px = f64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let body = &bytes[22..];
    if body.len() != w * h * 4 {
        return Err(Error::Format(format!(
            "depth body holds {} bytes, expected {}",
            body.len(),
            w * h * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DepthMap {
        z: Grid::from_vec(w, h, data),
        mm_per_px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgel::{press_shape, render_frame, GelGeometry, Illumination, MarkerField};

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ContactShape::sphere(4.0, 1.0, [160.0, 120.0]);
        let depth = press_shape(&shape, &GelGeometry::default()).unwrap();
        let field = MarkerField::default()
            .apply_shear(RigidShear::new(2.0, 0.0, 0.0), [0.0, 0.0])
            .unwrap();
        let frame = render_frame(&depth, &field, &Illumination::default()).unwrap();

        let mut w = SequenceWriter::create(dir.path()).unwrap();
        w.push(&frame, Some("sphere"), Some(&shape), Some(0.125)).unwrap();
        w.finish().unwrap();

        let idx = read_index(dir.path()).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx[0].shape.as_ref(), Some(&shape));
        assert_eq!(idx[0].shear, Some(RigidShear::new(2.0, 0.0, 0.0)));
        let back = load_frame(dir.path(), &idx[0]).unwrap();
        let d = back.truth_depth().unwrap();
        assert!((d.peak() - depth.peak()).abs() < 1e-6);
        assert_eq!(back.pixels.dims(), frame.pixels.dims());
    }

    #[test]
    fn malformed_sidecar_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(SIDECAR),
            "{\"index\":0,\"frame\":\"a.png\"}\n{not json}\n",
        )
        .unwrap();
        match read_index(dir.path()) {
            Err(Error::Sequence { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
