//! Binned RGB → surface-gradient lookup table.
//!
//! File layout (`FGLUT1`): the six magic bytes, `u32` bins per channel, then
//! `bins³ × 2` little-endian `f32` (gx, gy) pairs indexed `(r·bins + g)·bins + b`,
//! then `bins³` little-endian `u32` coverage counts.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{marker_mask, MaskParams};
use crate::frame::GelFrame;
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"FGLUT1";
pub const DEFAULT_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientLut {
    bins: usize,
    table: Vec<[f32; 2]>,
    coverage: Vec<u32>,
}

impl GradientLut {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    pub fn populated_bins(&self) -> usize {
        self.coverage.iter().filter(|&&c| c > 0).count()
    }

    #[inline]
    fn channel_bin(&self, v: f32) -> usize {
        ((v.clamp(0.0, 1.0) * self.bins as f32) as usize).min(self.bins - 1)
    }

    #[inline]
    pub fn bin_index(&self, rgb: [f32; 3]) -> usize {
        let [r, g, b] = rgb.map(|c| self.channel_bin(c));
        (r * self.bins + g) * self.bins + b
    }

    /// Mean gradient `(gx, gy)` in mm/mm for a colour.
    #[inline]
    pub fn lookup(&self, rgb: [f32; 3]) -> [f64; 2] {
        let [gx, gy] = self.table[self.bin_index(rgb)];
        [gx as f64, gy as f64]
    }

    pub fn coverage_at(&self, rgb: [f32; 3]) -> u32 {
        self.coverage[self.bin_index(rgb)]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&(self.bins as u32).to_le_bytes())?;
        for [gx, gy] in &self.table {
            out.write_all(&gx.to_le_bytes())?;
            out.write_all(&gy.to_le_bytes())?;
        }
        for c in &self.coverage {
            out.write_all(&c.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(Error::Format("missing FGLUT1 header".into()));
        }
        let bins = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if bins == 0 || bins > 256 {
            return Err(Error::Format(format!("unsupported bin count {bins}")));
        }
        let n = bins * bins * bins;
        let body = &bytes[10..];
        if body.len() != n * 12 {
            return Err(Error::Format(format!(
                "LUT body holds {} bytes, expected {}",
                body.len(),
                n * 12
            )));
        }
        let (tab, cov) = body.split_at(n * 8);
        let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap());
        let table = tab.chunks_exact(8).map(|c| [f(&c[..4]), f(&c[4..])]).collect();
        let coverage = cov
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            bins,
            table,
            coverage,
        })
    }
}

/// Builds the table from frames whose truth depth is known.
///
/// Every non-border pixel not covered by a marker contributes its truth gradient to
/// the bin of its colour. Empty bins take the value of the nearest populated bin
/// (Euclidean distance in bin space, lowest index on ties).
pub fn calibrate(frames: &[GelFrame], bins: usize, mask: &MaskParams) -> Result<GradientLut> {
    if frames.is_empty() {
        return Err(Error::NoCalibrationFrames);
    }
    let bins = bins.clamp(1, 256);
    let n = bins * bins * bins;
    let mut sums = vec![[0.0f64; 2]; n];
    let mut coverage = vec![0u32; n];
    let mut lut = GradientLut {
        bins,
        table: vec![[0.0; 2]; n],
        coverage: Vec::new(),
    };

    for (i, frame) in frames.iter().enumerate() {
        let depth = frame.truth_depth().ok_or(Error::MissingTruth(i))?;
        frame.check_dims(depth.width(), depth.height())?;
        let (gx, gy) = depth.gradients();
        let dark = marker_mask(frame, mask);
        for y in 1..frame.height() - 1 {
            for x in 1..frame.width() - 1 {
                if dark[(x, y)] {
                    continue;
                }
                let b = lut.bin_index(frame.pixels[(x, y)]);
                sums[b][0] += gx[(x, y)];
                sums[b][1] += gy[(x, y)];
                coverage[b] += 1;
            }
        }
    }

    let populated: Vec<usize> = (0..n).filter(|&b| coverage[b] > 0).collect();
    if populated.is_empty() {
        return Err(Error::NoCalibrationFrames);
    }
    for &b in &populated {
        let c = coverage[b] as f64;
        lut.table[b] = [(sums[b][0] / c) as f32, (sums[b][1] / c) as f32];
    }
    let coords = |b: usize| [(b / (bins * bins)) as i64, ((b / bins) % bins) as i64, (b % bins) as i64];
    let pop_coords: Vec<[i64; 3]> = populated.iter().map(|&b| coords(b)).collect();
    for b in 0..n {
        if coverage[b] > 0 {
            continue;
        }
        let q = coords(b);
        let nearest = pop_coords
            .iter()
            .enumerate()
            .min_by_key(|(_, p)| (0..3).map(|k| (p[k] - q[k]).pow(2)).sum::<i64>())
            .map(|(i, _)| populated[i])
            .expect("populated is non-empty");
        lut.table[b] = lut.table[nearest];
    }
    lut.coverage = coverage;
    Ok(lut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{DepthMap, FRAME_HEIGHT, FRAME_WIDTH, MM_PER_PX};
    use crate::synthgel::{
        press_shape, render_frame, ContactShape, GelGeometry, Illumination, MarkerField,
    };

    fn sphere_frame(radius: f64, depth: f64, center: [f64; 2]) -> GelFrame {
        let d = press_shape(&ContactShape::sphere(radius, depth, center), &GelGeometry::default())
            .unwrap();
        let empty = MarkerField::regular(0, 0, 1.0, 1.0, 4.0, FRAME_WIDTH, FRAME_HEIGHT);
        render_frame(&d, &empty, &Illumination::default()).unwrap()
    }

    #[test]
    fn background_bin_maps_to_zero_gradient() {
        let lut = calibrate(&[sphere_frame(4.0, 1.0, [160.0, 120.0])], 32, &MaskParams::default())
            .unwrap();
        let g = lut.lookup([0.35, 0.35, 0.35]);
        assert!(g[0].abs() < 0.01 && g[1].abs() < 0.01, "{g:?}");
        assert!(lut.coverage_at([0.35; 3]) > 10_000);
    }

    #[test]
    fn second_sphere_widens_coverage() {
        let one = calibrate(&[sphere_frame(3.0, 1.0, [160.0, 120.0])], 32, &MaskParams::default())
            .unwrap();
        let two = calibrate(
            &[
                sphere_frame(3.0, 1.0, [160.0, 120.0]),
                sphere_frame(5.0, 1.0, [160.0, 120.0]),
            ],
            32,
            &MaskParams::default(),
        )
        .unwrap();
        assert!(two.populated_bins() > one.populated_bins());
    }

    #[test]
    fn empty_and_truthless_inputs_are_rejected() {
        assert!(matches!(
            calibrate(&[], 32, &MaskParams::default()),
            Err(Error::NoCalibrationFrames)
        ));
        let mut f = sphere_frame(4.0, 1.0, [160.0, 120.0]);
        f.truth = None;
        assert!(matches!(
            calibrate(&[sphere_frame(4.0, 1.0, [100.0, 100.0]), f], 32, &MaskParams::default()),
            Err(Error::MissingTruth(1))
        ));
    }

    #[test]
    fn file_round_trip() {
        let lut = calibrate(&[sphere_frame(4.0, 1.0, [160.0, 120.0])], 16, &MaskParams::default())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lut.bin");
        lut.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"FGLUT1");
        assert_eq!(bytes.len(), 10 + 16 * 16 * 16 * 12);
        assert_eq!(GradientLut::load(&path).unwrap(), lut);
        assert!(GradientLut::from_bytes(b"FGLUT0\x10\0\0\0").is_err());
    }

    #[test]
    fn every_bin_is_served() {
        let flat = render_frame(
            &DepthMap::zeros(FRAME_WIDTH, FRAME_HEIGHT, MM_PER_PX),
            &MarkerField::regular(0, 0, 1.0, 1.0, 4.0, FRAME_WIDTH, FRAME_HEIGHT),
            &Illumination::default(),
        )
        .unwrap();
        let lut = calibrate(&[flat], 8, &MaskParams::default()).unwrap();
        assert_eq!(lut.populated_bins(), 1);
        // a colour nowhere near the calibration data still resolves
        assert_eq!(lut.lookup([1.0, 0.0, 1.0]), [0.0, 0.0]);
    }
}
