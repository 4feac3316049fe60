//! 8-bit rendering of raw grids, with optional point overlays.

use std::fs;
use std::path::Path;

use ctjoint::geometry::Vec2;
use ctjoint::io::RawGrid;

use crate::CliError;

pub const OVERLAY_RGB: [u8; 3] = [255, 0, 0];

/// `(min, max)` over the finite samples, `(0, 0)` when there are none.
pub fn window(g: &RawGrid) -> (f64, f64) {
    let (lo, hi) = g
        .data
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Grey levels with the top image row at the largest `x2`. A constant grid maps to 0.
pub fn grey_levels(g: &RawGrid, lo: f64, hi: f64) -> Vec<u8> {
    let span = hi - lo;
    let mut out = Vec::with_capacity(g.data.len());
    for row in 0..g.n2 {
        let i2 = g.n2 - 1 - row;
        for i1 in 0..g.n1 {
            let v = g.data[i2 * g.n1 + i1];
            let t = if span > 0.0 && v.is_finite() { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            out.push((t * 255.0).round() as u8);
        }
    }
    out
}

/// `(column, row)` of the rendered pixel containing `p`.
pub fn pixel_of(g: &RawGrid, p: Vec2) -> Option<(usize, usize)> {
    let [x1_min, x1_max, x2_min, x2_max] = g.extent;
    let u = (p[0] - x1_min) / (x1_max - x1_min) * g.n1 as f64;
    let v = (p[1] - x2_min) / (x2_max - x2_min) * g.n2 as f64;
    if !(u >= 0.0 && v >= 0.0 && u <= g.n1 as f64 && v <= g.n2 as f64) {
        return None;
    }
    let i1 = (u.floor() as usize).min(g.n1 - 1);
    let i2 = (v.floor() as usize).min(g.n2 - 1);
    Some((i1, g.n2 - 1 - i2))
}

pub fn overlay(g: &RawGrid, grey: &[u8], points: &[Vec2]) -> Vec<u8> {
    let mut rgb: Vec<u8> = grey.iter().flat_map(|&v| [v, v, v]).collect();
    for p in points {
        if let Some((c, r)) = pixel_of(g, *p) {
            let k = 3 * (r * g.n1 + c);
            rgb[k..k + 3].copy_from_slice(&OVERLAY_RGB);
        }
    }
    rgb
}

pub fn write_pnm(path: &Path, width: usize, height: usize, pixels: &[u8], color: bool) -> Result<(), CliError> {
    let magic = if color { "P6" } else { "P5" };
    let mut bytes = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[u8], color: bool) -> Result<(), CliError> {
    let ty = if color { image::ExtendedColorType::Rgb8 } else { image::ExtendedColorType::L8 };
    image::save_buffer(path, pixels, width as u32, height as u32, ty)
        .map_err(|e| CliError::Other(format!("png encoding failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(data: Vec<f64>) -> RawGrid {
        RawGrid::new(4, 2, [0.0, 4.0, 0.0, 2.0], data).unwrap()
    }

    #[test]
    fn constant_grid_is_uniform() {
        let g = grid(vec![3.0; 8]);
        let (lo, hi) = window(&g);
        assert_eq!((lo, hi), (3.0, 3.0));
        assert!(grey_levels(&g, lo, hi).iter().all(|&v| v == 0));
    }

    #[test]
    fn rows_are_flipped_and_windowed() {
        let g = grid((0..8).map(f64::from).collect());
        let (lo, hi) = window(&g);
        let px = grey_levels(&g, lo, hi);
        assert_eq!(px[0], (4.0f64 / 7.0 * 255.0).round() as u8);
        assert_eq!(px[4], 0);
        assert_eq!(px[3], 255);
    }

    #[test]
    fn pixel_mapping() {
        let g = grid(vec![0.0; 8]);
        assert_eq!(pixel_of(&g, [0.5, 0.5]), Some((0, 1)));
        assert_eq!(pixel_of(&g, [3.9, 1.9]), Some((3, 0)));
        assert_eq!(pixel_of(&g, [4.0, 2.0]), Some((3, 0)));
        assert_eq!(pixel_of(&g, [4.1, 1.0]), None);
        let rgb = overlay(&g, &[7; 8], &[[2.5, 0.2]]);
        assert_eq!(&rgb[3 * 6..3 * 7], &OVERLAY_RGB);
        assert_eq!(rgb.iter().filter(|&&v| v == 7).count(), 21);
    }
}
