use rayon::prelude::*;

use super::SparseLinearOperator;
use crate::error::Result;
use crate::geometry::{line_from_params, ImageGrid, LineSinogramGrid, ScannerConfig, Vec2};

/// Exact chord length of the line `foot + t dir` through every pixel it crosses.
pub fn chord_lengths(grid: &ImageGrid, foot: Vec2, dir: Vec2) -> Vec<(u32, f64)> {
    let lo = [grid.x1_min, grid.x2_min];
    let hi = [grid.x1_max, grid.x2_max];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..2 {
        if dir[k].abs() < 1e-15 {
            if foot[k] < lo[k] || foot[k] > hi[k] {
                return Vec::new();
            }
        } else {
            let a = (lo[k] - foot[k]) / dir[k];
            let b = (hi[k] - foot[k]) / dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if !(t1 > t0) {
        return Vec::new();
    }

    let steps = [grid.dx1(), grid.dx2()];
    let counts = [grid.n1, grid.n2];
    let mut ts = vec![t0, t1];
    for k in 0..2 {
        if dir[k].abs() < 1e-15 {
            continue;
        }
        for i in 1..counts[k] {
            let t = (lo[k] + i as f64 * steps[k] - foot[k]) / dir[k];
            if t > t0 && t < t1 {
                ts.push(t);
            }
        }
    }
    ts.sort_unstable_by(f64::total_cmp);

    let mut out: Vec<(u32, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        if dt <= 1e-14 {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let p = [foot[0] + tm * dir[0], foot[1] + tm * dir[1]];
        if let Some(idx) = grid.locate(p) {
            match out.last_mut() {
                Some(last) if last.0 == idx as u32 => last.1 += dt,
                _ => out.push((idx as u32, dt)),
            }
        }
    }
    out
}

/// Line transform over `sino`; with `limited`, rows outside the admissible
/// line set are dropped and `row_labels` index the full sinogram.
pub fn assemble_radon(
    img: &ImageGrid,
    sino: &LineSinogramGrid,
    limited: bool,
    _cfg: &ScannerConfig,
) -> Result<SparseLinearOperator> {
    let labels: Vec<usize> = (0..sino.len()).filter(|&k| !limited || sino.mask[k]).collect();
    let n_s = sino.n_s();
    let rows = labels
        .par_iter()
        .map(|&k| {
            let (foot, dir) = line_from_params(sino.s_samples[k % n_s], sino.theta_samples[k / n_s]);
            chord_lengths(img, foot, dir)
        })
        .collect();
    SparseLinearOperator::from_rows(img.len(), rows, labels)
}
