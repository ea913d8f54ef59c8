use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::frame::{RigidShear, FRAME_HEIGHT, FRAME_WIDTH};
use crate::{Error, Result};

/// Marker grid painted on the gel.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerField {
    pub rows: usize,
    pub cols: usize,
    /// Row-major rest centres in pixels.
    pub rest: Vec<[f64; 2]>,
    pub radius_px: f64,
    /// Per-marker displacement from rest in pixels.
    pub displacement: Vec<[f64; 2]>,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Accumulated rigid motion and the pivot it is expressed about.
    pub truth: Option<(RigidShear, [f64; 2])>,
}

impl MarkerField {
    /// Regular `rows × cols` lattice centred in the frame.
    pub fn regular(
        rows: usize,
        cols: usize,
        pitch_x: f64,
        pitch_y: f64,
        radius_px: f64,
        frame_width: usize,
        frame_height: usize,
    ) -> Self {
        let cx = (frame_width as f64 - 1.0) / 2.0;
        let cy = (frame_height as f64 - 1.0) / 2.0;
        let rest = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| {
                    [
                        cx + (c as f64 - (cols as f64 - 1.0) / 2.0) * pitch_x,
                        cy + (r as f64 - (rows as f64 - 1.0) / 2.0) * pitch_y,
                    ]
                })
            })
            .collect::<Vec<_>>();
        let n = rest.len();
        Self {
            rows,
            cols,
            rest,
            radius_px,
            displacement: vec![[0.0; 2]; n],
            frame_width,
            frame_height,
            truth: None,
        }
    }

    /// Perturbs rest positions with isotropic Gaussian jitter (deterministic per seed).
    pub fn with_jitter(mut self, sigma_px: f64, seed: u64) -> Self {
        if sigma_px > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma_px).expect("finite sigma");
            for p in &mut self.rest {
                p[0] += normal.sample(&mut rng);
                p[1] += normal.sample(&mut rng);
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.rest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.rest
            .iter()
            .zip(&self.displacement)
            .map(|(r, d)| [r[0] + d[0], r[1] + d[1]])
            .collect()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let (sx, sy) = self
            .positions()
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    }

    /// Rotates every marker about `pivot` by `shear.dphi_deg`, then translates by
    /// `(dx_px, dy_px)`. Fails without modification if any marker would end up
    /// closer than one radius to the frame border.
    pub fn apply_shear(&self, shear: RigidShear, pivot: [f64; 2]) -> Result<MarkerField> {
        let (s, c) = shear.dphi_deg.to_radians().sin_cos();
        let moved: Vec<[f64; 2]> = self
            .positions()
            .iter()
            .map(|p| {
                let (rx, ry) = (p[0] - pivot[0], p[1] - pivot[1]);
                [
                    c * rx - s * ry + pivot[0] + shear.dx_px,
                    s * rx + c * ry + pivot[1] + shear.dy_px,
                ]
            })
            .collect();

        let r = self.radius_px;
        let (xmax, ymax) = (self.frame_width as f64 - 1.0 - r, self.frame_height as f64 - 1.0 - r);
        let out: Vec<usize> = moved
            .iter()
            .enumerate()
            .filter(|(_, p)| !(p[0] >= r && p[0] <= xmax && p[1] >= r && p[1] <= ymax))
            .map(|(i, _)| i)
            .collect();
        if !out.is_empty() {
            return Err(Error::MarkersOutOfFrame(out));
        }

        let mut next = self.clone();
        for ((d, m), rest) in next.displacement.iter_mut().zip(&moved).zip(&self.rest) {
            *d = [m[0] - rest[0], m[1] - rest[1]];
        }
        next.truth = Some(compose(self.truth, shear, pivot));
        Ok(next)
    }
}

impl Default for MarkerField {
    /// 8 × 10 markers, radius 4 px, pitch 28 × 26 px. The pitch leaves room for a
    /// 10° rotation about the frame centre plus a few pixels of translation.
    fn default() -> Self {
        Self::regular(8, 10, 28.0, 26.0, 4.0, FRAME_WIDTH, FRAME_HEIGHT)
    }
}

fn compose(
    prev: Option<(RigidShear, [f64; 2])>,
    next: RigidShear,
    pivot: [f64; 2],
) -> (RigidShear, [f64; 2]) {
    let Some((total, c0)) = prev else {
        return (next, pivot);
    };
    // T2(T1(p)) with T1 about c0 and T2 about pivot, re-expressed about c0.
    let (s, c) = next.dphi_deg.to_radians().sin_cos();
    let vx = c0[0] + total.dx_px - pivot[0];
    let vy = c0[1] + total.dy_px - pivot[1];
    let tx = c * vx - s * vy + pivot[0] + next.dx_px - c0[0];
    let ty = s * vx + c * vy + pivot[1] + next.dy_px - c0[1];
    (
        RigidShear::new(tx, ty, total.dphi_deg + next.dphi_deg),
        c0,
    )
}
