//! Rigid in-plane motion from trusted marker displacements.
//!
//! Closed-form 2-D Procrustes: with rest points `aᵢ` and tracked points `bᵢ`, both
//! centred on their means, the least-squares rotation is
//! `θ = atan2(Σ aᵢ × bᵢ, Σ aᵢ · bᵢ)`; the translation moves the rest centroid
//! onto the tracked centroid.

use serde::{Deserialize, Serialize};

use crate::frame::RigidShear;
use crate::markers::MarkerState;
use crate::{Error, Result};

/// Axis-aligned pixel rectangle, inclusive of its lower and exclusive of its upper edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] < self.x1 && p[1] >= self.y0 && p[1] < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShearEstimate {
    pub dx_px: f64,
    pub dy_px: f64,
    pub dphi_deg: f64,
    pub n_markers_used: usize,
    /// RMS distance between fitted and tracked positions.
    pub residual_px: f64,
    /// Rotation pivot (trusted rest centroid).
    pub pivot_px: [f64; 2],
}

impl ShearEstimate {
    pub fn shear(&self) -> RigidShear {
        RigidShear::new(self.dx_px, self.dy_px, self.dphi_deg)
    }
}

/// Relative spread below which the marker set counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

/// Fits the rigid motion of the trusted markers (whose rest position lies in
/// `region`, if given).
pub fn estimate(state: &MarkerState, region: Option<&PixelRect>) -> Result<ShearEstimate> {
    let used: Vec<usize> = (0..state.len())
        .filter(|&i| state.trust[i] && region.is_none_or(|r| r.contains(state.rest[i])))
        .collect();
    let n = used.len();
    if n < 3 {
        return Err(Error::InsufficientTrusted { found: n, needed: 3 });
    }
    if used
        .iter()
        .any(|&i| !state.pos[i].iter().chain(&state.rest[i]).all(|v| v.is_finite()))
    {
        return Err(Error::NonFinite("marker positions"));
    }

    let centroid = |pts: &[[f64; 2]]| {
        let k = |j: usize| pts.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        [k(0), k(1)]
    };
    let rest: Vec<[f64; 2]> = used.iter().map(|&i| state.rest[i]).collect();
    let pos: Vec<[f64; 2]> = used.iter().map(|&i| state.pos[i]).collect();
    let c = centroid(&rest);
    let q = centroid(&pos);

    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    let (mut cross, mut dot) = (0.0, 0.0);
    for (r, p) in rest.iter().zip(&pos) {
        let a = [r[0] - c[0], r[1] - c[1]];
        let b = [p[0] - q[0], p[1] - q[1]];
        sxx += a[0] * a[0];
        syy += a[1] * a[1];
        sxy += a[0] * a[1];
        cross += a[0] * b[1] - a[1] * b[0];
        dot += a[0] * b[0] + a[1] * b[1];
    }
    // smaller eigenvalue of the rest scatter matrix
    let tr = sxx + syy;
    let lmin = 0.5 * (tr - ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt());
    if tr <= 0.0 || lmin <= COLLINEAR_TOL * tr {
        return Err(Error::Degenerate("trusted markers are collinear"));
    }

    let theta = cross.atan2(dot);
    let (s, co) = theta.sin_cos();
    let sq: f64 = rest
        .iter()
        .zip(&pos)
        .map(|(r, p)| {
            let a = [r[0] - c[0], r[1] - c[1]];
            let fit = [co * a[0] - s * a[1] + q[0], s * a[0] + co * a[1] + q[1]];
            (fit[0] - p[0]).powi(2) + (fit[1] - p[1]).powi(2)
        })
        .sum();

    Ok(ShearEstimate {
        dx_px: q[0] - c[0],
        dy_px: q[1] - c[1],
        dphi_deg: theta.to_degrees(),
        n_markers_used: n,
        residual_px: (sq / n as f64).sqrt(),
        pivot_px: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgel::MarkerField;
    use proptest::prelude::*;

    /// Default marker lattice rotated about its centroid, then translated.
    fn sheared(shear: RigidShear) -> MarkerState {
        let f = MarkerField::default();
        let c = f.centroid();
        let (s, co) = shear.dphi_deg.to_radians().sin_cos();
        let mut st = MarkerState::at_rest(f.rows, f.cols, f.rest.clone()).unwrap();
        for p in st.pos.iter_mut() {
            let (x, y) = (p[0] - c[0], p[1] - c[1]);
            *p = [
                c[0] + co * x - s * y + shear.dx_px,
                c[1] + s * x + co * y + shear.dy_px,
            ];
        }
        st
    }

    #[test]
    fn rest_gives_zero_motion() {
        let e = estimate(&sheared(RigidShear::default()), None).unwrap();
        assert_eq!((e.dx_px, e.dy_px, e.dphi_deg, e.residual_px), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(e.n_markers_used, 80);
    }

    #[test]
    fn pure_translation_is_recovered() {
        let e = estimate(&sheared(RigidShear::new(5.0, 0.0, 0.0)), None).unwrap();
        assert!((e.dx_px - 5.0).abs() < 1e-9 && e.dy_px.abs() < 1e-9 && e.dphi_deg.abs() < 1e-9);
    }

    #[test]
    fn rotation_about_centroid_is_recovered() {
        let e = estimate(&sheared(RigidShear::new(0.0, 0.0, 10.0)), None).unwrap();
        assert!((e.dphi_deg - 10.0).abs() < 1e-9);
        assert!(e.dx_px.abs() < 1e-9 && e.dy_px.abs() < 1e-9);
        assert!(e.residual_px < 1e-6);
    }

    #[test]
    fn untrusted_markers_are_ignored() {
        let mut s = sheared(RigidShear::new(2.0, -1.0, 3.0));
        s.pos[5] = [0.0, 0.0];
        s.trust[5] = false;
        let e = estimate(&s, None).unwrap();
        assert_eq!(e.n_markers_used, 79);
        assert!(e.residual_px < 1e-6);
    }

    #[test]
    fn region_restricts_markers() {
        let s = sheared(RigidShear::new(1.0, 1.0, 0.0));
        let r = PixelRect {
            x0: 0.0,
            y0: 0.0,
            x1: 160.0,
            y1: 120.0,
        };
        assert_eq!(estimate(&s, Some(&r)).unwrap().n_markers_used, 20);
    }

    #[test]
    fn too_few_or_collinear_markers_are_rejected() {
        let mut s = sheared(RigidShear::default());
        s.trust.iter_mut().skip(2).for_each(|t| *t = false);
        assert!(matches!(estimate(&s, None), Err(Error::InsufficientTrusted { found: 2, .. })));
        // one grid row only
        let mut s = sheared(RigidShear::default());
        s.trust.iter_mut().enumerate().for_each(|(i, t)| *t = i < 10);
        assert!(matches!(estimate(&s, None), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn rigid_fields_are_inverted_exactly(
            dx in -20.0f64..20.0, dy in -15.0f64..15.0, phi in -10.0f64..10.0,
        ) {
            let e = estimate(&sheared(RigidShear::new(dx, dy, phi)), None).unwrap();
            prop_assert!(e.residual_px < 1e-6);
            prop_assert!((e.dx_px - dx).abs() < 1e-9);
            prop_assert!((e.dy_px - dy).abs() < 1e-9);
            prop_assert!((e.dphi_deg - phi).abs() < 1e-9);
        }

        #[test]
        fn translation_is_equivariant(
            phi in -8.0f64..8.0, ux in -5.0f64..5.0, uy in -5.0f64..5.0,
        ) {
            let base = sheared(RigidShear::new(1.0, 2.0, phi));
            let mut moved = base.clone();
            moved.pos.iter_mut().for_each(|p| { p[0] += ux; p[1] += uy; });
            let a = estimate(&base, None).unwrap();
            let b = estimate(&moved, None).unwrap();
            prop_assert!((b.dx_px - a.dx_px - ux).abs() < 1e-9);
            prop_assert!((b.dy_px - a.dy_px - uy).abs() < 1e-9);
            prop_assert!((b.dphi_deg - a.dphi_deg).abs() < 1e-9);
        }
    }
}
