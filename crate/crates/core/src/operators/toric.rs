use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_len, SparseLinearOperator};
use crate::error::{Error, Result};
use crate::geometry::{Image, ImageGrid, ScannerConfig, ToricSinogramGrid, CENTER_LINE};
use crate::microlocal::beta_max;

/// Which circle of each toric section a transform integrates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    One,
    Two,
    Both,
}

impl Branch {
    /// `(-1)^(j-1)`: the sign with which `s` enters `x0` for a point on `C_j`.
    fn x0_sign(self) -> Result<f64> {
        match self {
            Branch::One => Ok(1.0),
            Branch::Two => Ok(-1.0),
            Branch::Both => Err(Error::InvalidParameter("a single branch is required".into())),
        }
    }
}

/// Arc-length weights of the lower circle arc centred at `(c, 2)` with radius
/// `r`, clipped to the grid and to `x2 < top`. The arc is split at every
/// pixel edge and sub-arcs longer than a quarter pixel are subdivided, so each
/// pixel receives its exact arc length.
fn arc_weights(img: &ImageGrid, c: f64, r: f64, top: f64, out: &mut Vec<(u32, f64)>) {
    let q = (CENTER_LINE - top) / r;
    if q >= 1.0 {
        return;
    }
    let outer = q.acos();
    let p = (CENTER_LINE - img.x2_min) / r;
    let inner = if p < 1.0 { p.acos() } else { 0.0 };
    let lo = (img.x1_min - c) / r;
    let hi = (img.x1_max - c) / r;
    if lo > 1.0 || hi < -1.0 {
        return;
    }
    let (l, u) = (lo.max(-1.0).asin(), hi.min(1.0).asin());
    let (dx1, dx2) = (img.dx1(), img.dx2());
    let max_step = 0.25 * dx1.min(dx2) / r;

    let mut cuts: Vec<f64> = Vec::new();
    for (side, (a, b)) in [(-1.0, (-outer, -inner)), (1.0, (inner, outer))] {
        let (a, b) = (a.max(l), b.min(u));
        if b <= a {
            continue;
        }
        cuts.clear();
        cuts.push(a);
        cuts.push(b);
        // vertical pixel edges: x1 = c + r sin(phi) is increasing in phi
        let (xa, xb) = (c + r * a.sin(), c + r * b.sin());
        let i_lo = ((xa - img.x1_min) / dx1).floor().max(0.0) as usize + 1;
        let i_hi = (((xb - img.x1_min) / dx1).ceil() as usize).min(img.n1);
        for i in i_lo..i_hi {
            let phi = ((img.x1_min + i as f64 * dx1 - c) / r).clamp(-1.0, 1.0).asin();
            if phi > a && phi < b {
                cuts.push(phi);
            }
        }
        // horizontal pixel edges: x2 = 2 - r cos(phi) decreases with |phi|
        let (ya, yb) = (CENTER_LINE - r * a.cos(), CENTER_LINE - r * b.cos());
        let (y_lo, y_hi) = (ya.min(yb), ya.max(yb));
        let j_lo = ((y_lo - img.x2_min) / dx2).floor().max(0.0) as usize + 1;
        let j_hi = (((y_hi - img.x2_min) / dx2).ceil() as usize).min(img.n2);
        for j in j_lo..j_hi {
            let phi = side * ((CENTER_LINE - img.x2_min - j as f64 * dx2) / r).clamp(-1.0, 1.0).acos();
            if phi > a && phi < b {
                cuts.push(phi);
            }
        }
        cuts.sort_unstable_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let span = w[1] - w[0];
            if span <= 0.0 {
                continue;
            }
            let n = (span / max_step).ceil().max(1.0) as usize;
            let dphi = span / n as f64;
            for k in 0..n {
                let phi = w[0] + (k as f64 + 0.5) * dphi;
                let (sn, cs) = phi.sin_cos();
                if let Some(idx) = img.locate([c + r * sn, CENTER_LINE - r * cs]) {
                    match out.last_mut() {
                        Some(last) if last.0 == idx as u32 => last.1 += r * dphi,
                        _ => out.push((idx as u32, r * dphi)),
                    }
                }
            }
        }
    }
}

/// Toric section transform over `sino`, with rows ordered `r`-major.
pub fn assemble_toric(
    img: &ImageGrid,
    sino: &ToricSinogramGrid,
    cfg: &ScannerConfig,
    branch: Branch,
) -> Result<SparseLinearOperator> {
    sino.validate(cfg)?;
    let top = img.x2_max.min(1.0);
    let n_x0 = sino.n_x0();
    let rows = (0..sino.len())
        .into_par_iter()
        .map(|k| {
            let r = sino.r_samples[k / n_x0];
            let x0 = sino.x0_samples[k % n_x0];
            let s = (r * r - 1.0).sqrt();
            let mut row = Vec::new();
            if matches!(branch, Branch::One | Branch::Both) {
                arc_weights(img, x0 - s, r, top, &mut row);
            }
            if matches!(branch, Branch::Two | Branch::Both) {
                arc_weights(img, x0 + s, r, top, &mut row);
            }
            row
        })
        .collect();
    SparseLinearOperator::from_rows(img.len(), rows, (0..sino.len()).collect())
}

/// Bilinear interpolation on a uniform sample lattice, zero outside its hull.
struct Lattice<'a> {
    r0: f64,
    dr: f64,
    nr: usize,
    x00: f64,
    dx0: f64,
    nx0: usize,
    g: &'a [f64],
}

impl Lattice<'_> {
    fn coord(v: f64, v0: f64, dv: f64, n: usize) -> Option<(usize, f64)> {
        let u = (v - v0) / dv;
        let last = (n - 1) as f64;
        if !(u >= -1e-9 && u <= last + 1e-9) {
            return None;
        }
        let u = u.clamp(0.0, last);
        let i = (u.floor() as usize).min(n.saturating_sub(2));
        Some((i, u - i as f64))
    }

    fn at(&self, r: f64, x0: f64) -> f64 {
        let (Some((i, fr)), Some((j, fx))) = (
            Self::coord(r, self.r0, self.dr, self.nr),
            Self::coord(x0, self.x00, self.dx0, self.nx0),
        ) else {
            return 0.0;
        };
        let v = |a: usize, b: usize| {
            if a < self.nr && b < self.nx0 {
                self.g[a * self.nx0 + b]
            } else {
                0.0
            }
        };
        (1.0 - fr) * ((1.0 - fx) * v(i, j) + fx * v(i, j + 1)) + fr * ((1.0 - fx) * v(i + 1, j) + fx * v(i + 1, j + 1))
    }
}

/// Continuous backprojection of toric data onto circle branch `branch`:
/// integrates `g` over all circles `C_j` through each pixel centre, with the
/// opening angle `beta` bounded by the largest measured radius. `n_beta`
/// trapezoid nodes per pixel.
pub fn backproject_toric_continuous(
    g: &[f64],
    sino: &ToricSinogramGrid,
    branch: Branch,
    img: &ImageGrid,
    cfg: &ScannerConfig,
    n_beta: usize,
) -> Result<Image> {
    check_len(sino.len(), g.len())?;
    let sign = branch.x0_sign()?;
    if img.center(0, img.n2 - 1)[1] >= 1.0 {
        return Err(Error::OutsideScanRegion(img.center(0, img.n2 - 1)[1]));
    }
    if n_beta < 2 {
        return Err(Error::InvalidParameter("need at least two quadrature nodes".into()));
    }
    let lat = Lattice {
        r0: sino.r_samples[0],
        dr: sino.r_step(),
        nr: sino.n_r(),
        x00: sino.x0_samples[0],
        dx0: sino.x0_step(),
        nx0: sino.n_x0(),
        g,
    };
    let data = (0..img.len())
        .into_par_iter()
        .map(|idx| {
            let x = img.center_of(idx);
            let bm = beta_max(x[1], cfg.r_max).unwrap_or(0.0).min(FRAC_PI_2);
            if bm <= 0.0 {
                return 0.0;
            }
            let h = 2.0 * bm / (n_beta - 1) as f64;
            let depth = CENTER_LINE - x[1];
            let mut acc = 0.0;
            for k in 0..n_beta {
                let beta = -bm + k as f64 * h;
                let r = depth / beta.cos();
                let s = (r * r - 1.0).max(0.0).sqrt();
                let val = lat.at(r, x[0] + sign * s + r * beta.sin());
                acc += if k == 0 || k == n_beta - 1 { 0.5 * val } else { val };
            }
            acc * h
        })
        .collect();
    Image::new(*img, data)
}
