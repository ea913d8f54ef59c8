//! Compliant-stage kinematics.
//!
//! Each of the three actuation tabs contributes an independent polynomial
//! displacement; the stage pose is their sum:
//!
//! ```text
//! x = Σᵢ p_x,i(θᵢ)    y = Σᵢ p_y,i(θᵢ)    φ = Σᵢ p_φ,i(θᵢ)
//! ```
//!
//! Polynomials are stored in ascending powers with a zero constant term, so the
//! neutral angles map to the zero pose.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TABS: usize = 3;

/// Normalized servo angles, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct TabAngles([f64; TABS]);

impl TabAngles {
    pub const ZERO: Self = Self([0.0; TABS]);

    pub fn new(theta: [f64; TABS]) -> Result<Self> {
        for &t in &theta {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::Range {
                    what: "tab angle",
                    value: t,
                    min: -1.0,
                    max: 1.0,
                });
            }
        }
        Ok(Self(theta))
    }

    /// Clamps into range; NaN becomes 0.
    pub fn clamped(theta: [f64; TABS]) -> Self {
        Self(theta.map(|t| if t.is_nan() { 0.0 } else { t.clamp(-1.0, 1.0) }))
    }

    pub fn theta(&self) -> [f64; TABS] {
        self.0
    }

    /// Only tab `i` actuated.
    pub fn single(i: usize, theta: f64) -> Result<Self> {
        let mut t = [0.0; TABS];
        t[i] = theta;
        Self::new(t)
    }
}

impl TryFrom<[f64; 3]> for TabAngles {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TabAngles> for [f64; 3] {
    fn from(t: TabAngles) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StagePose {
    pub x_mm: f64,
    pub y_mm: f64,
    pub phi_deg: f64,
}

impl StagePose {
    pub fn new(x_mm: f64, y_mm: f64, phi_deg: f64) -> Self {
        Self {
            x_mm,
            y_mm,
            phi_deg,
        }
    }

    fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.x_mm, self.y_mm, self.phi_deg)
    }

    fn from_vec(v: Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Lateral distance and absolute rotation difference to `other`.
    pub fn error_to(&self, other: &StagePose) -> (f64, f64) {
        (
            (self.x_mm - other.x_mm).hypot(self.y_mm - other.y_mm),
            (self.phi_deg - other.phi_deg).abs(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticReference,
    Measured,
}

/// RMS fit residual per tab and pose component.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitResiduals {
    pub x_mm: [f64; TABS],
    pub y_mm: [f64; TABS],
    pub phi_deg: [f64; TABS],
}

impl FitResiduals {
    pub fn total(&self) -> f64 {
        self.x_mm.iter().chain(&self.y_mm).chain(&self.phi_deg).sum()
    }
}

/// Coefficients in ascending powers, `c[0] = 0`, one polynomial per tab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCalibration {
    pub degree: usize,
    pub p_x: [Vec<f64>; TABS],
    pub p_y: [Vec<f64>; TABS],
    pub p_phi: [Vec<f64>; TABS],
    pub provenance: Provenance,
    #[serde(default)]
    pub residuals: FitResiduals,
}

fn eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * t + k)
}

fn eval_deriv(c: &[f64], t: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &ck)| acc * t + k as f64 * ck)
}

impl StageCalibration {
    /// Rejects wrong lengths, non-finite or non-zero constant terms.
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Config("stage calibration degree must be at least 1".into()));
        }
        for c in self.p_x.iter().chain(&self.p_y).chain(&self.p_phi) {
            if c.len() != self.degree + 1 {
                return Err(Error::Config(format!(
                    "polynomial has {} coefficients, degree {} needs {}",
                    c.len(),
                    self.degree,
                    self.degree + 1
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("stage calibration"));
            }
            if c[0] != 0.0 {
                return Err(Error::Config("polynomial constant term must be 0".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let cal: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Synthetic three-tab calibration with tabs pushing along 0°, 120° and 240°.
///
/// Per tab, lateral travel is `0.6θ + 0.1θ³` mm along the tab direction and
/// rotation is `4.5θ + 0.5θ³` degrees, i.e. 0.7 mm / 5° at full stroke.
pub fn reference_calibration() -> StageCalibration {
    let lateral = [0.0, 0.6, 0.0, 0.1];
    let rotation = [0.0, 4.5, 0.0, 0.5];
    let s = 3f64.sqrt() / 2.0;
    let dirs = [(1.0, 0.0), (-0.5, s), (-0.5, -s)];
    let along = |k: f64| -> Vec<f64> { lateral.iter().map(|c| c * k).collect() };
    StageCalibration {
        degree: 3,
        p_x: dirs.map(|d| along(d.0)),
        p_y: dirs.map(|d| along(d.1)),
        p_phi: [rotation.to_vec(), rotation.to_vec(), rotation.to_vec()],
        provenance: Provenance::SyntheticReference,
        residuals: FitResiduals::default(),
    }
}

/// Least-squares fit of every per-tab polynomial with the constant term pinned to 0.
///
/// Each sample must actuate at most one tab; neutral samples count towards every tab.
pub fn fit(samples: &[(TabAngles, StagePose)], degree: usize) -> Result<StageCalibration> {
    if degree == 0 {
        return Err(Error::Config("fit degree must be at least 1".into()));
    }
    let mut per_tab: [Vec<(f64, StagePose)>; TABS] = Default::default();
    for (i, (theta, pose)) in samples.iter().enumerate() {
        let active: Vec<usize> = (0..TABS).filter(|&k| theta.0[k] != 0.0).collect();
        match active.as_slice() {
            [] => per_tab.iter_mut().for_each(|v| v.push((0.0, *pose))),
            [k] => per_tab[*k].push((theta.0[*k], *pose)),
            _ => return Err(Error::MultiTabSample(i)),
        }
    }

    let mut p_x: [Vec<f64>; TABS] = Default::default();
    let mut p_y: [Vec<f64>; TABS] = Default::default();
    let mut p_phi: [Vec<f64>; TABS] = Default::default();
    let mut residuals = FitResiduals::default();

    for (tab, rows) in per_tab.iter().enumerate() {
        if rows.len() < degree + 1 {
            return Err(Error::InsufficientSamples {
                tab,
                found: rows.len(),
                needed: degree + 1,
            });
        }
        let m = rows.len();
        let a = DMatrix::from_fn(m, degree, |r, c| rows[r].0.powi(c as i32 + 1));
        let svd = a.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        if s_max == 0.0 || svd.singular_values.min() <= s_max * 1e-12 {
            return Err(Error::RankDeficient(tab));
        }
        let component = |f: fn(&StagePose) -> f64| -> Result<(Vec<f64>, f64)> {
            let b = DVector::from_iterator(m, rows.iter().map(|(_, p)| f(p)));
            let sol = svd
                .solve(&b, 1e-15)
                .map_err(|_| Error::RankDeficient(tab))?;
            let rms = ((&a * &sol - &b).norm_squared() / m as f64).sqrt();
            let mut c = vec![0.0];
            c.extend(sol.iter());
            Ok((c, rms))
        };
        (p_x[tab], residuals.x_mm[tab]) = component(|p| p.x_mm)?;
        (p_y[tab], residuals.y_mm[tab]) = component(|p| p.y_mm)?;
        (p_phi[tab], residuals.phi_deg[tab]) = component(|p| p.phi_deg)?;
    }

    Ok(StageCalibration {
        degree,
        p_x,
        p_y,
        p_phi,
        provenance: Provenance::Measured,
        residuals,
    })
}

pub fn forward(theta: &TabAngles, cal: &StageCalibration) -> StagePose {
    let sum = |p: &[Vec<f64>; TABS]| (0..TABS).map(|i| eval(&p[i], theta.0[i])).sum();
    StagePose::new(sum(&cal.p_x), sum(&cal.p_y), sum(&cal.p_phi))
}

/// `J[r][c] = ∂pose_r/∂θ_c`, rows ordered (x, y, φ).
pub fn jacobian(theta: &TabAngles, cal: &StageCalibration) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| {
        let p = match r {
            0 => &cal.p_x,
            1 => &cal.p_y,
            _ => &cal.p_phi,
        };
        eval_deriv(&p[c], theta.0[c])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkParams {
    pub damping: f64,
    pub max_iters: usize,
    pub tol_mm: f64,
    pub tol_deg: f64,
    pub accept_mm: f64,
    pub accept_deg: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            max_iters: 100,
            tol_mm: 0.01,
            tol_deg: 0.05,
            accept_mm: 0.1,
            accept_deg: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub theta: TabAngles,
    pub pose: StagePose,
    pub error_mm: f64,
    pub error_deg: f64,
    pub iterations: usize,
}

/// Damped Newton: `θ ← clamp(θ + (JᵀJ + λI)⁻¹ Jᵀ e)` until the pose error is
/// inside tolerance or the iteration budget runs out.
pub fn solve_ik(target: &StagePose, cal: &StageCalibration, seed: TabAngles) -> Result<IkSolution> {
    solve_ik_with(target, cal, seed, &IkParams::default())
}

pub fn solve_ik_with(
    target: &StagePose,
    cal: &StageCalibration,
    seed: TabAngles,
    params: &IkParams,
) -> Result<IkSolution> {
    if !(target.x_mm.is_finite() && target.y_mm.is_finite() && target.phi_deg.is_finite()) {
        return Err(Error::NonFinite("stage target"));
    }
    let goal = target.to_vec();
    let mut theta = seed;
    let mut best = (f64::INFINITY, theta);
    let mut iterations = 0;
    loop {
        let pose = forward(&theta, cal);
        let (e_mm, e_deg) = pose.error_to(target);
        let score = e_mm / params.accept_mm + e_deg / params.accept_deg;
        if score < best.0 {
            best = (score, theta);
        }
        if (e_mm < params.tol_mm && e_deg < params.tol_deg) || iterations >= params.max_iters {
            break;
        }
        let j = jacobian(&theta, cal);
        let jt = j.transpose();
        let lhs = jt * j + Matrix3::identity() * params.damping;
        let Some(step) = lhs.lu().solve(&(jt * (goal - pose.to_vec()))) else {
            break;
        };
        let next = Vector3::from(theta.0) + step;
        theta = TabAngles::clamped([next[0], next[1], next[2]]);
        iterations += 1;
    }

    let theta = best.1;
    let pose = forward(&theta, cal);
    let (error_mm, error_deg) = pose.error_to(target);
    if error_mm > params.accept_mm || error_deg > params.accept_deg {
        return Err(Error::Workspace {
            best: theta,
            translation_mm: error_mm,
            rotation_deg: error_deg,
        });
    }
    Ok(IkSolution {
        theta,
        pose: StagePose::from_vec(pose.to_vec()),
        error_mm,
        error_deg,
        iterations,
    })
}
