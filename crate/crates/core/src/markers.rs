//! Marker tracking by mean shift, and outlier correction.
//!
//! Tracking climbs a darkness map (local mean minus grayscale, less the mask
//! offset, floored at 0) so that flat background carries no weight and every
//! marker disk is a compact density mode.
//!
//! Correction flags a marker as untrusted when its position is not on a dark mask
//! pixel, when its displacement is too long, or when it disagrees with any of its
//! four grid neighbours. Untrusted displacements are rebuilt by linear
//! interpolation along the marker's grid row and column from the nearest trusted
//! markers on each side. Where a line has trusted markers on one side only, the
//! two nearest of them are extrapolated; with neither, the nearest trusted marker
//! on the grid is copied.

use serde::{Deserialize, Serialize};

use crate::depthmap::{darkness, marker_mask, MaskParams};
use crate::frame::GelFrame;
use crate::grid::Grid;
use crate::{Error, Result};

/// Which side of the mask marks a marker as untrusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolarity {
    /// A marker sitting off every dark blob has lost its disk.
    #[default]
    UntrustedOffDark,
    /// Inverse reading: a marker on a dark pixel is untrusted.
    UntrustedOnDark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionThresholds {
    pub max_norm_px: f64,
    pub max_neighbor_diff_px: f64,
    pub kernel_radius_px: f64,
    pub max_iters: usize,
    pub eps_px: f64,
    pub mask: MaskParams,
    pub mask_polarity: MaskPolarity,
}

impl Default for CorrectionThresholds {
    fn default() -> Self {
        Self {
            max_norm_px: 30.0,
            max_neighbor_diff_px: 15.0,
            kernel_radius_px: 9.0,
            max_iters: 20,
            eps_px: 0.1,
            mask: MaskParams::default(),
            mask_polarity: MaskPolarity::default(),
        }
    }
}

impl CorrectionThresholds {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_norm_px", self.max_norm_px),
            ("max_neighbor_diff_px", self.max_neighbor_diff_px),
            ("kernel_radius_px", self.kernel_radius_px),
            ("eps_px", self.eps_px),
            ("max_iters", self.max_iters as f64),
            ("mask.window_px", self.mask.window_px as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Tracked markers in row-major grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerState {
    pub rows: usize,
    pub cols: usize,
    pub rest: Vec<[f64; 2]>,
    pub pos: Vec<[f64; 2]>,
    pub trust: Vec<bool>,
}

impl MarkerState {
    /// All markers at rest and trusted.
    pub fn at_rest(rows: usize, cols: usize, rest: Vec<[f64; 2]>) -> Result<Self> {
        if rest.len() != rows * cols {
            return Err(Error::MarkerCount {
                expected: rows * cols,
                found: rest.len(),
            });
        }
        let n = rest.len();
        Ok(Self {
            rows,
            cols,
            pos: rest.clone(),
            rest,
            trust: vec![true; n],
        })
    }

    pub fn len(&self) -> usize {
        self.rest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    /// Displacement `pos - rest` of marker `i`.
    pub fn vec(&self, i: usize) -> [f64; 2] {
        [self.pos[i][0] - self.rest[i][0], self.pos[i][1] - self.rest[i][1]]
    }

    pub fn vecs(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.vec(i)).collect()
    }

    pub fn set_vec(&mut self, i: usize, v: [f64; 2]) {
        self.pos[i] = [self.rest[i][0] + v[0], self.rest[i][1] + v[1]];
    }

    pub fn trusted_count(&self) -> usize {
        self.trust.iter().filter(|&&t| t).count()
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = (i / self.cols, i % self.cols);
        let up = (r > 0).then(|| i - self.cols);
        let down = (r + 1 < self.rows).then(|| i + self.cols);
        let left = (c > 0).then(|| i - 1);
        let right = (c + 1 < self.cols).then(|| i + 1);
        [up, down, left, right].into_iter().flatten()
    }
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Marker-tracking weight image.
pub fn weight_image(frame: &GelFrame, params: &MaskParams) -> Grid<f64> {
    darkness(frame, params).map(|&d| (d - params.offset).max(0.0))
}

/// Uniform-disk mean shift from `start`. Stays put when the kernel holds no weight.
pub fn mean_shift(weights: &Grid<f64>, start: [f64; 2], th: &CorrectionThresholds) -> [f64; 2] {
    let r = th.kernel_radius_px;
    let r2 = r * r;
    let (w, h) = (weights.width() as f64, weights.height() as f64);
    let mut c = start;
    for _ in 0..th.max_iters {
        let x0 = (c[0] - r).ceil().max(0.0);
        let x1 = (c[0] + r).floor().min(w - 1.0);
        let y0 = (c[1] - r).ceil().max(0.0);
        let y1 = (c[1] + r).floor().min(h - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            break;
        }
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for y in y0 as usize..=y1 as usize {
            let dy = y as f64 - c[1];
            let row = weights.row(y);
            for x in x0 as usize..=x1 as usize {
                let dx = x as f64 - c[0];
                let wt = row[x];
                if wt > 0.0 && dx * dx + dy * dy <= r2 {
                    sw += wt;
                    sx += wt * x as f64;
                    sy += wt * y as f64;
                }
            }
        }
        if sw <= 0.0 {
            break;
        }
        let next = [sx / sw, sy / sw];
        let step = norm([next[0] - c[0], next[1] - c[1]]);
        c = next;
        if step < th.eps_px {
            break;
        }
    }
    c
}

/// Blobs smaller than this are noise, not markers.
const MIN_BLOB_AREA: usize = 6;

/// Detects markers in a rest frame and orders them into a `rows × cols` grid.
pub fn init_markers(
    frame: &GelFrame,
    rows: usize,
    cols: usize,
    th: &CorrectionThresholds,
) -> Result<MarkerState> {
    let mask = marker_mask(frame, &th.mask);
    let weights = weight_image(frame, &th.mask);
    let mut centres: Vec<[f64; 2]> = blobs(&mask)
        .into_iter()
        .filter(|b| b.len() >= MIN_BLOB_AREA)
        .map(|b| {
            let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for &(x, y) in &b {
                let wt = weights[(x, y)].max(1e-9);
                sw += wt;
                sx += wt * x as f64;
                sy += wt * y as f64;
            }
            mean_shift(&weights, [sx / sw, sy / sw], th)
        })
        .collect();

    if centres.len() != rows * cols || cols == 0 {
        return Err(Error::MarkerCount {
            expected: rows * cols,
            found: centres.len(),
        });
    }
    centres.sort_by(|a, b| a[1].total_cmp(&b[1]));
    for row in centres.chunks_mut(cols) {
        row.sort_by(|a, b| a[0].total_cmp(&b[0]));
    }
    MarkerState::at_rest(rows, cols, centres)
}

/// 8-connected components of the `true` pixels.
fn blobs(mask: &Grid<bool>) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = Grid::filled(w, h, false);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[(x, y)] || seen[(x, y)] {
                continue;
            }
            let mut blob = Vec::new();
            seen[(x, y)] = true;
            stack.push((x, y));
            while let Some((px, py)) = stack.pop() {
                blob.push((px, py));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (px as isize + dx, py as isize + dy);
                        if *mask.get(nx, ny).unwrap_or(&false) && !seen[(nx as usize, ny as usize)] {
                            seen[(nx as usize, ny as usize)] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
            out.push(blob);
        }
    }
    out
}

/// One mean-shift step per marker, seeded at the previous positions. Trust flags
/// are carried over unchanged; [`correct`] recomputes them.
pub fn track(frame: &GelFrame, prev: &MarkerState, th: &CorrectionThresholds) -> MarkerState {
    track_weights(&weight_image(frame, &th.mask), prev, th)
}

pub fn track_weights(weights: &Grid<f64>, prev: &MarkerState, th: &CorrectionThresholds) -> MarkerState {
    let mut next = prev.clone();
    for (p, start) in next.pos.iter_mut().zip(&prev.pos) {
        *p = mean_shift(weights, *start, th);
    }
    next
}

/// Trust decision for every marker, evaluated on the uncorrected displacements.
pub fn classify(state: &MarkerState, mask: &Grid<bool>, th: &CorrectionThresholds) -> Vec<bool> {
    let vecs = state.vecs();
    (0..state.len())
        .map(|i| {
            let [x, y] = state.pos[i];
            let on_dark = x.is_finite()
                && y.is_finite()
                && *mask.get(x.round() as isize, y.round() as isize).unwrap_or(&false);
            let mask_ok = match th.mask_polarity {
                MaskPolarity::UntrustedOffDark => on_dark,
                MaskPolarity::UntrustedOnDark => !on_dark,
            };
            // written so that NaN fails every check
            mask_ok
                && norm(vecs[i]) <= th.max_norm_px
                && state.neighbors(i).all(|j| {
                    norm([vecs[i][0] - vecs[j][0], vecs[i][1] - vecs[j][1]]) <= th.max_neighbor_diff_px
                })
        })
        .collect()
}

/// Flags outliers and replaces their displacement by interpolation over trusted
/// markers. Untrusted markers keep `trust = false` but carry the repaired vector.
pub fn correct(state: &MarkerState, mask: &Grid<bool>, th: &CorrectionThresholds) -> Result<MarkerState> {
    let trust = classify(state, mask, th);
    let found = trust.iter().filter(|&&t| t).count();
    if found < 3 {
        return Err(Error::InsufficientTrusted { found, needed: 3 });
    }
    let vecs = state.vecs();
    let mut out = state.clone();
    for i in (0..state.len()).filter(|&i| !trust[i]) {
        out.set_vec(i, interpolate(state.rows, state.cols, &vecs, &trust, i));
    }
    out.trust = trust;
    Ok(out)
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

enum Estimate {
    Bracketed([f64; 2]),
    Extrapolated([f64; 2]),
}

/// Linear interpolation along the grid line through `at` between the nearest trusted
/// markers on each side; with trusted markers on one side only, linear
/// extrapolation from the two nearest of them.
fn along_line(vecs: &[[f64; 2]], trust: &[bool], line: impl Iterator<Item = usize>, at: usize) -> Option<Estimate> {
    let idx: Vec<usize> = line.collect();
    let k = idx.iter().position(|&j| j == at)?;
    let mut before = (0..k).rev().filter(|&m| trust[idx[m]]);
    let mut after = (k + 1..idx.len()).filter(|&m| trust[idx[m]]);
    let at_t = |a: usize, b: usize| {
        let t = (k as f64 - a as f64) / (b as f64 - a as f64);
        lerp(vecs[idx[a]], vecs[idx[b]], t)
    };
    match (before.next(), after.next()) {
        (Some(a), Some(b)) => Some(Estimate::Bracketed(at_t(a, b))),
        (Some(a), None) => before.next().map(|a2| Estimate::Extrapolated(at_t(a2, a))),
        (None, Some(b)) => after.next().map(|b2| Estimate::Extrapolated(at_t(b, b2))),
        (None, None) => None,
    }
}

fn interpolate(rows: usize, cols: usize, vecs: &[[f64; 2]], trust: &[bool], i: usize) -> [f64; 2] {
    let (r, c) = (i / cols, i % cols);
    let row = along_line(vecs, trust, (0..cols).map(|k| r * cols + k), i);
    let col = along_line(vecs, trust, (0..rows).map(|k| k * cols + c), i);
    use Estimate::*;
    match (row, col) {
        (Some(Bracketed(a)), Some(Bracketed(b))) => lerp(a, b, 0.5),
        (Some(Bracketed(a)), _) | (_, Some(Bracketed(a))) => a,
        (Some(Extrapolated(a)), Some(Extrapolated(b))) => lerp(a, b, 0.5),
        (Some(Extrapolated(a)), None) | (None, Some(Extrapolated(a))) => a,
        (None, None) => {
            let d2 = |j: usize| {
                let (dr, dc) = ((j / cols) as f64 - r as f64, (j % cols) as f64 - c as f64);
                dr * dr + dc * dc
            };
            let j = (0..vecs.len())
                .filter(|&j| trust[j])
                .min_by(|&a, &b| d2(a).total_cmp(&d2(b)))
                .expect("at least three trusted markers");
            vecs[j]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{DepthMap, RigidShear, FRAME_HEIGHT, FRAME_WIDTH, MM_PER_PX};
    use crate::synthgel::{render_frame, Illumination, MarkerField};
    use proptest::prelude::*;

    fn flat() -> DepthMap {
        DepthMap::zeros(FRAME_WIDTH, FRAME_HEIGHT, MM_PER_PX)
    }

    fn render(field: &MarkerField) -> GelFrame {
        render_frame(&flat(), field, &Illumination::default()).unwrap()
    }

    fn grid_state(rows: usize, cols: usize, vecs: &[[f64; 2]]) -> MarkerState {
        let rest = (0..rows * cols)
            .map(|i| [40.0 + 28.0 * (i % cols) as f64, 40.0 + 26.0 * (i / cols) as f64])
            .collect();
        let mut s = MarkerState::at_rest(rows, cols, rest).unwrap();
        for (i, v) in vecs.iter().enumerate() {
            s.set_vec(i, *v);
        }
        s
    }

    // generous margin so displaced test grids never leave the mask
    fn all_dark() -> Grid<bool> {
        Grid::filled(2 * FRAME_WIDTH, 2 * FRAME_HEIGHT, true)
    }

    #[test]
    fn init_finds_rest_grid() {
        let field = MarkerField::default();
        let s = init_markers(&render(&field), 8, 10, &CorrectionThresholds::default()).unwrap();
        assert_eq!(s.len(), 80);
        assert!(s.vecs().iter().all(|v| *v == [0.0, 0.0]));
        for (a, b) in s.rest.iter().zip(&field.rest) {
            assert!(norm([a[0] - b[0], a[1] - b[1]]) < 0.1, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn init_with_jitter_stays_within_half_pixel() {
        let field = MarkerField::default().with_jitter(0.4, 11);
        let s = init_markers(&render(&field), 8, 10, &CorrectionThresholds::default()).unwrap();
        for (a, b) in s.rest.iter().zip(&field.rest) {
            assert!(norm([a[0] - b[0], a[1] - b[1]]) < 0.5);
        }
    }

    #[test]
    fn occluded_marker_is_a_count_error() {
        let mut field = MarkerField::default();
        field.rest.remove(37);
        field.displacement.remove(37);
        match init_markers(&render(&field), 8, 10, &CorrectionThresholds::default()) {
            Err(Error::MarkerCount { expected, found }) => assert_eq!((expected, found), (80, 79)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tracking_rest_frame_is_stationary() {
        let field = MarkerField::default();
        let frame = render(&field);
        let th = CorrectionThresholds::default();
        let s = init_markers(&frame, 8, 10, &th).unwrap();
        let t = track(&frame, &s, &th);
        for (a, b) in t.pos.iter().zip(&s.pos) {
            assert!(norm([a[0] - b[0], a[1] - b[1]]) < 0.1);
        }
    }

    #[test]
    fn tracking_follows_translation() {
        let field = MarkerField::default();
        let th = CorrectionThresholds::default();
        let s = init_markers(&render(&field), 8, 10, &th).unwrap();
        let moved = field.apply_shear(RigidShear::new(3.0, 2.0, 0.0), [0.0, 0.0]).unwrap();
        let t = track(&render(&moved), &s, &th);
        for v in t.vecs() {
            assert!((v[0] - 3.0).abs() < 0.5 && (v[1] - 2.0).abs() < 0.5, "{v:?}");
        }
    }

    #[test]
    fn jumped_marker_is_lost_then_flagged() {
        let field = MarkerField::default();
        let th = CorrectionThresholds::default();
        let s = init_markers(&render(&field), 8, 10, &th).unwrap();
        let mut jumped = field.clone();
        jumped.displacement[33] = [15.0, 20.0];
        let frame = render(&jumped);
        let t = track(&frame, &s, &th);
        assert!(norm(t.vec(33)) < 1.0, "kernel cannot reach a 25 px jump");
        let c = correct(&t, &marker_mask(&frame, &th.mask), &th).unwrap();
        assert!(!c.trust[33]);
        assert_eq!(c.trusted_count(), 79);
    }

    #[test]
    fn uniform_field_is_all_trusted() {
        let s = grid_state(8, 10, &[[5.0, 0.0]; 80]);
        let c = correct(&s, &all_dark(), &CorrectionThresholds::default()).unwrap();
        assert_eq!(c, s);
    }

    #[test]
    fn long_vector_is_replaced_by_neighbours() {
        let mut v = vec![[0.0, 0.0]; 80];
        v[34] = [35.0, 0.0];
        let c = correct(&grid_state(8, 10, &v), &all_dark(), &CorrectionThresholds::default()).unwrap();
        assert!(!c.trust[34]);
        assert!(norm(c.vec(34)) < 1e-9);
    }

    #[test]
    fn neighbour_outlier_is_replaced() {
        let mut v = vec![[2.0, 0.0]; 80];
        v[45] = [20.0, 0.0];
        let c = correct(&grid_state(8, 10, &v), &all_dark(), &CorrectionThresholds::default()).unwrap();
        assert!(!c.trust[45]);
        assert!(norm([c.vec(45)[0] - 2.0, c.vec(45)[1]]) < 1e-9);
    }

    #[test]
    fn norm_threshold_is_inclusive() {
        let th = CorrectionThresholds::default();
        let mut v = vec![[20.0, 0.0]; 80];
        v[44] = [30.0, 0.0];
        assert!(classify(&grid_state(8, 10, &v), &all_dark(), &th)[44]);
        v[44] = [30.0 + 1e-9, 0.0];
        assert!(!classify(&grid_state(8, 10, &v), &all_dark(), &th)[44]);
    }

    #[test]
    fn neighbour_threshold_is_inclusive() {
        let th = CorrectionThresholds::default();
        let mut v = vec![[0.0, 0.0]; 80];
        v[44] = [15.0, 0.0];
        assert!(classify(&grid_state(8, 10, &v), &all_dark(), &th).iter().all(|&t| t));
        v[44] = [15.0 + 1e-9, 0.0];
        assert!(!classify(&grid_state(8, 10, &v), &all_dark(), &th)[44]);
    }

    #[test]
    fn mask_polarity_flag_inverts_the_mask_test() {
        let s = grid_state(8, 10, &[[0.0, 0.0]; 80]);
        let mut th = CorrectionThresholds::default();
        let light = Grid::filled(FRAME_WIDTH, FRAME_HEIGHT, false);
        assert!(classify(&s, &light, &th).iter().all(|&t| !t));
        th.mask_polarity = MaskPolarity::UntrustedOnDark;
        assert!(classify(&s, &light, &th).iter().all(|&t| t));
    }

    #[test]
    fn too_few_trusted_is_an_error() {
        let light = Grid::filled(FRAME_WIDTH, FRAME_HEIGHT, false);
        let s = grid_state(8, 10, &[[0.0, 0.0]; 80]);
        assert!(matches!(
            correct(&s, &light, &CorrectionThresholds::default()),
            Err(Error::InsufficientTrusted { found: 0, .. })
        ));
    }

    #[test]
    fn corner_without_bracket_extrapolates_along_lines() {
        let mut v: Vec<[f64; 2]> = (0..80).map(|i| [(i % 10) as f64 * 0.1, (i / 10) as f64 * -0.2]).collect();
        let truth = v[0];
        v[0] = [40.0, 40.0];
        let c = correct(&grid_state(8, 10, &v), &all_dark(), &CorrectionThresholds::default()).unwrap();
        assert!(!c.trust[1] && !c.trust[10]);
        assert!(norm([c.vec(0)[0] - truth[0], c.vec(0)[1] - truth[1]]) < 1e-12);
    }

    #[test]
    fn isolated_marker_takes_nearest_trusted() {
        let mut v: Vec<[f64; 2]> = (0..80).map(|i| [(i % 10) as f64 * 0.1, 0.0]).collect();
        for i in (0..10).chain((0..8).map(|r| r * 10)) {
            v[i] = [40.0, 40.0];
        }
        let c = correct(&grid_state(8, 10, &v), &all_dark(), &CorrectionThresholds::default()).unwrap();
        // row 0, column 0 and their neighbours are untrusted; nearest trusted to 0 is 22
        assert!(norm([c.vec(0)[0] - v[22][0], c.vec(0)[1] - v[22][1]]) < 1e-12);
    }

    fn vec_field() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec(prop::array::uniform2(-8.0f64..8.0), 80)
    }

    proptest! {
        #[test]
        fn uniform_translation_is_a_fixed_point(dx in -21.0f64..21.0, dy in -21.0f64..21.0) {
            let s = grid_state(8, 10, &[[dx, dy]; 80]);
            let c = correct(&s, &all_dark(), &CorrectionThresholds::default()).unwrap();
            prop_assert_eq!(c, s);
        }

        #[test]
        fn correction_is_idempotent(
            mut v in vec_field(),
            outliers in prop::collection::vec((0usize..80, -60.0f64..60.0, -60.0f64..60.0), 0..8),
        ) {
            for (i, x, y) in outliers {
                v[i] = [x, y];
            }
            let th = CorrectionThresholds::default();
            let once = correct(&grid_state(8, 10, &v), &all_dark(), &th).unwrap();
            prop_assume!(classify(&once, &all_dark(), &th).iter().all(|&t| t));
            let twice = correct(&once, &all_dark(), &th).unwrap();
            prop_assert_eq!(twice.vecs(), once.vecs());
        }

        #[test]
        fn affine_fields_are_repaired_exactly(
            a in prop::array::uniform2(-10.0f64..10.0),
            m in prop::array::uniform4(-0.5f64..0.5),
            outliers in prop::collection::vec((0usize..80, 40.0f64..60.0, 0.0f64..6.3), 1..8),
        ) {
            let truth: Vec<[f64; 2]> = (0..80)
                .map(|i| {
                    let (r, c) = ((i / 10) as f64, (i % 10) as f64);
                    [a[0] + m[0] * c + m[1] * r, a[1] + m[2] * c + m[3] * r]
                })
                .collect();
            let mut v = truth.clone();
            for &(i, len, ang) in &outliers {
                v[i] = [truth[i][0] + len * ang.cos(), truth[i][1] + len * ang.sin()];
            }
            let c = correct(&grid_state(8, 10, &v), &all_dark(), &CorrectionThresholds::default()).unwrap();
            for i in 0..80 {
                let (r, col) = (i / 10, i % 10);
                let row_ok = (0..10).filter(|&k| c.trust[r * 10 + k]).count() >= 2;
                let col_ok = (0..8).filter(|&k| c.trust[k * 10 + col]).count() >= 2;
                if row_ok || col_ok {
                    let e = norm([c.vec(i)[0] - truth[i][0], c.vec(i)[1] - truth[i][1]]);
                    prop_assert!(e < 1e-9, "marker {} off by {}", i, e);
                }
            }
        }
    }
}
