//! Which singularities each modality sees, and where the toric normal
//! operator moves the ones it does not image in place.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ImageGrid, ScannerConfig, Vec2, CENTER_LINE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covector {
    pub x: Vec2,
    pub xi: Vec2,
}

impl Covector {
    pub fn new(x: Vec2, xi: Vec2) -> Self {
        Self { x, xi }
    }
}

/// The circle through `x` conormal to `xi`, centred on `x2 = 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleData {
    pub c: f64,
    pub r: f64,
    pub s: f64,
    /// Offsets `x0` for which the circle is `C_1` and `C_2` respectively.
    pub x0: [f64; 2],
    pub sigma: f64,
}

pub fn circle_from_covector(cv: &Covector) -> Result<CircleData> {
    let [x1, x2] = cv.x;
    let [k1, k2] = cv.xi;
    if k2 == 0.0 {
        return Err(Error::InvisibleDirection);
    }
    if x2 >= 1.0 {
        return Err(Error::OutsideScanRegion(x2));
    }
    let depth = CENTER_LINE - x2;
    let c = x1 + k1 * depth / k2;
    let r = depth * k1.hypot(k2) / k2.abs();
    if r <= 1.0 {
        return Err(Error::DegenerateCircle(r));
    }
    let s = (r * r - 1.0).sqrt();
    Ok(CircleData { c, r, s, x0: [c + s, c - s], sigma: -k2 / depth })
}

/// Largest angle from vertical of a normal direction at height `x2` that is
/// conormal to a measured circle of radius at most `r_max`.
pub fn beta_max(x2: f64, r_max: f64) -> Result<f64> {
    let depth = CENTER_LINE - x2;
    if !(depth > 0.0 && depth < r_max) {
        return Err(Error::OutsideScanRegion(x2));
    }
    Ok(((r_max / depth).powi(2) - 1.0).sqrt().atan())
}

pub fn compton_visible_cone(x: Vec2, cfg: &ScannerConfig) -> Result<f64> {
    beta_max(x[1], cfg.r_max)
}

/// Angle of `xi` from the vertical axis, folded into `[0, pi/2]`.
pub fn angle_from_vertical(xi: Vec2) -> f64 {
    xi[0].abs().atan2(xi[1].abs())
}

/// Radius test: the circle conormal to `cv` is one the scanner measures.
pub fn compton_radius_visible(cv: &Covector, cfg: &ScannerConfig) -> bool {
    circle_from_covector(cv).is_ok_and(|cd| cd.r <= cfg.r_max)
}

/// Radius test plus the requirement that some branch offset of the circle lies
/// within the detector span `[-a, a]`.
pub fn compton_data_visible(cv: &Covector, cfg: &ScannerConfig) -> bool {
    match circle_from_covector(cv) {
        Ok(cd) => cd.r <= cfg.r_max && cd.x0.iter().any(|x0| x0.abs() <= cfg.a),
        Err(_) => false,
    }
}

/// Normals of the lines through a point that meet both the source row and the
/// transmission detectors: `±(cos alpha, sin alpha)` for `alpha` in `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XrayCone {
    pub lo: f64,
    pub hi: f64,
}

impl XrayCone {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Whether the unit direction at angle `phi` (or its antipode) is a normal in the cone.
    pub fn contains(&self, phi: f64) -> bool {
        let a = (phi + PI / 2.0).rem_euclid(PI) - PI / 2.0;
        a >= self.lo && a <= self.hi
    }
}

pub fn xray_visible_cone(x: Vec2, cfg: &ScannerConfig) -> Result<Option<XrayCone>> {
    let (hs, hd) = (cfg.source_height, cfg.detector_height());
    let [x1, x2] = x;
    if !(x2 > hd && x2 < hs) {
        return Err(Error::OutsideScanRegion(x2));
    }
    // lines x + u (t, -1): t is the slope that also fixes the normal angle atan(t)
    let (up, down) = (hs - x2, x2 - hd);
    let lo = ((x1 - cfg.a) / up).max((-cfg.a - x1) / down);
    let hi = ((x1 + cfg.a) / up).min((cfg.a - x1) / down);
    Ok((hi >= lo).then(|| XrayCone { lo: lo.atan(), hi: hi.atan() }))
}

/// Whether the direction at angle `phi` at `x` is seen by either modality.
pub fn direction_visible(x: Vec2, phi: f64, cfg: &ScannerConfig) -> bool {
    let (sn, cs) = phi.sin_cos();
    let xray = matches!(xray_visible_cone(x, cfg), Ok(Some(c)) if c.contains(phi));
    xray || compton_data_visible(&Covector::new(x, [cs, sn]), cfg)
}

pub const VISIBILITY_DIRECTIONS: usize = 720;

/// Fraction of the unit circle of directions visible at `x`.
pub fn coverage_at(x: Vec2, cfg: &ScannerConfig) -> f64 {
    let n = VISIBILITY_DIRECTIONS;
    let seen = (0..n).filter(|k| direction_visible(x, (*k as f64 + 0.5) * TAU / n as f64, cfg)).count();
    seen as f64 / n as f64
}

/// Per-pixel coverage fraction; pixels outside the scan region get 0.
pub fn visibility_map(img: &ImageGrid, cfg: &ScannerConfig) -> Vec<f64> {
    (0..img.len())
        .into_par_iter()
        .map(|idx| {
            let x = img.center_of(idx);
            if cfg.in_scan_region(x[1]) { coverage_at(x, cfg) } else { 0.0 }
        })
        .collect()
}

/// A mapped covector, with `eta` of unit length and its original length kept apart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArtifactCovector {
    pub point: Vec2,
    pub eta: Vec2,
    pub magnitude: f64,
}

fn unit_with_magnitude(point: Vec2, v: Vec2) -> Option<ArtifactCovector> {
    let m = v[0].hypot(v[1]);
    (m > 0.0 && m.is_finite()).then(|| ArtifactCovector { point, eta: [v[0] / m, v[1] / m], magnitude: m })
}

/// Image of `(x, xi)` under the artifact map through the `C_1` backprojection
/// of `C_2` data, or `None` where the map is undefined.
pub fn lambda12(cv: &Covector) -> Option<ArtifactCovector> {
    let cd = circle_from_covector(cv).ok()?;
    let [x1, x2] = cv.x;
    let [k1, k2] = cv.xi;
    let (s, x0) = (cd.s, cd.x0[0]);
    let den = 2.0 * (x1 - x0) + s;
    if den == 0.0 {
        return None;
    }
    let y1 = s * (x1 - x0) / den + x0;
    let c2 = x0 + s;
    let arg = cd.r * cd.r - (y1 - c2).powi(2);
    if arg < 0.0 {
        return None;
    }
    let y2 = CENTER_LINE - arg.sqrt();
    let factor = -2.0 * k1 - s * k2 / (CENTER_LINE - x2);
    unit_with_magnitude([y1, y2], [factor * (y1 - c2), factor * (y2 - CENTER_LINE)])
}

/// Companion of [`lambda12`] with the roles of the two circles exchanged.
pub fn lambda21(cv: &Covector) -> Option<ArtifactCovector> {
    let cd = circle_from_covector(cv).ok()?;
    let [y1, y2] = cv.x;
    let [e1, e2] = cv.xi;
    let (s, x0) = (cd.s, cd.x0[1]);
    let den = -2.0 * (y1 - x0) + s;
    if den == 0.0 {
        return None;
    }
    let x1 = s * (y1 - x0) / den + x0;
    let c1 = x0 - s;
    let arg = s * s + 1.0 - (x1 - c1).powi(2);
    if arg < 0.0 {
        return None;
    }
    let x2 = CENTER_LINE - arg.sqrt();
    let factor = 2.0 * e1 - s * e2 / (CENTER_LINE - y2);
    unit_with_magnitude([x1, x2], [factor * (x1 - c1), factor * (x2 - CENTER_LINE)])
}

pub const SUPPORT_BETA_SAMPLES: usize = 2000;

/// Which cross term a support residual belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cross {
    S12,
    S21,
}

fn support_residual(x: Vec2, y: Vec2, beta: f64, which: Cross) -> f64 {
    let r = (CENTER_LINE - x[1]) / beta.cos();
    let s = (r * r - 1.0).sqrt();
    let own = x[0] + r * beta.sin();
    let other = match which {
        Cross::S12 => own + 2.0 * s,
        Cross::S21 => own - 2.0 * s,
    };
    (y[0] - other).hypot(y[1] - CENTER_LINE) - r
}

/// Angles `beta` at which a circle through `x` (within the measured radii)
/// has its partner circle passing through `y`.
fn support_roots(x: Vec2, y: Vec2, cfg: &ScannerConfig, which: Cross) -> Vec<f64> {
    let Ok(bm) = beta_max(x[1], cfg.r_max) else {
        return Vec::new();
    };
    let n = SUPPORT_BETA_SAMPLES;
    let at = |k: usize| -bm + 2.0 * bm * k as f64 / (n - 1) as f64;
    let mut roots = Vec::new();
    let mut prev = support_residual(x, y, at(0), which);
    for k in 1..n {
        let (b0, b1) = (at(k - 1), at(k));
        let cur = support_residual(x, y, b1, which);
        if prev == 0.0 {
            roots.push(b0);
        } else if prev.signum() != cur.signum() && cur != 0.0 {
            let mid = 0.5 * (b0 + b1);
            let fm = support_residual(x, y, mid, which);
            roots.push(if fm.signum() == prev.signum() { 0.5 * (mid + b1) } else { 0.5 * (b0 + mid) });
        }
        prev = cur;
    }
    if prev == 0.0 {
        roots.push(bm);
    }
    roots
}

/// Pixels where the cross terms of the toric normal operator can place
/// energy from a point source at `y`: the union of the two support sets.
pub fn artifact_support_sets(y: Vec2, img: &ImageGrid, cfg: &ScannerConfig) -> Vec<bool> {
    (0..img.len())
        .into_par_iter()
        .map(|idx| {
            let x = img.center_of(idx);
            if x[1] >= 1.0 {
                return false;
            }
            !support_roots(x, y, cfg, Cross::S12).is_empty() || !support_roots(x, y, cfg, Cross::S21).is_empty()
        })
        .collect()
}

/// Predicted artifact locations, one list per map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArtifactCurves {
    pub lambda12: Vec<Vec2>,
    pub lambda21: Vec<Vec2>,
}

impl ArtifactCurves {
    pub fn all(&self) -> impl Iterator<Item = &Vec2> {
        self.lambda12.iter().chain(&self.lambda21)
    }
}

/// Artifact locations predicted for a point singularity at `y`: images of
/// `(y, xi)` under both maps, over `n` directions that the toric data
/// measure on the corresponding branch, kept when they land below `x2 = 1`.
pub fn predicted_artifact_points(y: Vec2, cfg: &ScannerConfig, n: usize) -> ArtifactCurves {
    let mut out = ArtifactCurves::default();
    let Ok(bm) = beta_max(y[1], cfg.r_max) else {
        return out;
    };
    for k in 0..n {
        let psi = -bm + 2.0 * bm * (k as f64 + 0.5) / n as f64;
        let cv = Covector::new(y, [psi.sin(), psi.cos()]);
        let Ok(cd) = circle_from_covector(&cv) else { continue };
        if cd.r > cfg.r_max {
            continue;
        }
        if cd.x0[0].abs() <= cfg.a {
            if let Some(a) = lambda12(&cv).filter(|a| a.point[1] < 1.0) {
                out.lambda12.push(a.point);
            }
        }
        if cd.x0[1].abs() <= cfg.a {
            if let Some(a) = lambda21(&cv).filter(|a| a.point[1] < 1.0) {
                out.lambda21.push(a.point);
            }
        }
    }
    out
}
