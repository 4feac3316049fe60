//! Reconstruction quality measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Image, ImageGrid};
use crate::operators::check_len;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub tau: f64,
    pub tau_g: f64,
    /// Edge-matching tolerance of the gradient score, in pixels.
    pub dilation: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { tau: 0.1, tau_g: 0.2, dilation: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eps_ne: f64,
    pub eps_mu: f64,
    pub f_supp_ne: f64,
    pub f_grad_ne: f64,
    pub f_supp_mu: f64,
    pub f_grad_mu: f64,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 6] =
        ["eps(n_e)", "eps(mu_E)", "supp(n_e)", "grad(n_e)", "supp(mu_E)", "grad(mu_E)"];

    pub fn values(&self) -> [f64; 6] {
        [self.eps_ne, self.eps_mu, self.f_supp_ne, self.f_grad_ne, self.f_supp_mu, self.f_grad_mu]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Self { eps_ne: v[0], eps_mu: v[1], f_supp_ne: v[2], f_grad_ne: v[3], f_supp_mu: v[4], f_grad_mu: v[5] }
    }

    pub fn evaluate(
        ne_true: &Image,
        ne: &Image,
        mu_true: &Image,
        mu: &Image,
        cfg: &MetricConfig,
    ) -> Result<Self> {
        Ok(Self {
            eps_ne: rel_error(ne_true, ne)?,
            eps_mu: rel_error(mu_true, mu)?,
            f_supp_ne: f_score_support(ne_true, ne, cfg.tau)?,
            f_grad_ne: f_score_gradient(ne_true, ne, cfg.tau_g, cfg.dilation)?,
            f_supp_mu: f_score_support(mu_true, mu, cfg.tau)?,
            f_grad_mu: f_score_gradient(mu_true, mu, cfg.tau_g, cfg.dilation)?,
        })
    }
}

fn same_grid(a: &Image, b: &Image) -> Result<()> {
    check_len(a.data.len(), b.data.len())
}

pub fn rel_error(x_true: &Image, y: &Image) -> Result<f64> {
    same_grid(x_true, y)?;
    let den: f64 = x_true.data.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Degenerate("zero ground truth".into()));
    }
    let num: f64 = x_true.data.iter().zip(&y.data).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((num / den).sqrt())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("threshold {tau} outside (0, 1)")))
    }
}

/// `v > tau * max(v)`; an image without positive values gives an empty mask.
pub fn binarize(v: &[f64], tau: f64) -> Vec<bool> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(m > 0.0) {
        return vec![false; v.len()];
    }
    v.iter().map(|x| *x > tau * m).collect()
}

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let na = a.iter().filter(|v| **v).count();
    let nb = b.iter().filter(|v| **v).count();
    if na + nb == 0 {
        return 1.0;
    }
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    2.0 * both as f64 / (na + nb) as f64
}

pub fn f_score_support(x_true: &Image, y: &Image, tau: f64) -> Result<f64> {
    same_grid(x_true, y)?;
    check_tau(tau)?;
    let a = binarize(&x_true.data, tau);
    if !a.contains(&true) {
        return Err(Error::Degenerate("empty true support".into()));
    }
    Ok(dice(&a, &binarize(&y.data, tau)))
}

/// Forward-difference gradient magnitude, zero across the last row and column.
pub fn gradient_magnitude(img: &Image) -> Vec<f64> {
    let g = &img.grid;
    (0..g.len())
        .map(|idx| {
            let (i1, i2) = g.coords(idx);
            let v = img.data[idx];
            let d1 = if i1 + 1 < g.n1 { img.data[idx + 1] - v } else { 0.0 };
            let d2 = if i2 + 1 < g.n2 { img.data[idx + g.n1] - v } else { 0.0 };
            d1.hypot(d2)
        })
        .collect()
}

/// Square-neighbourhood dilation by `k` pixels.
pub fn dilate(mask: &[bool], grid: &ImageGrid, k: usize) -> Vec<bool> {
    if k == 0 {
        return mask.to_vec();
    }
    let k = k as isize;
    let (n1, n2) = (grid.n1 as isize, grid.n2 as isize);
    (0..grid.len())
        .map(|idx| {
            let (i1, i2) = grid.coords(idx);
            let (i1, i2) = (i1 as isize, i2 as isize);
            (-k..=k).any(|d2| {
                (-k..=k).any(|d1| {
                    let (a, b) = (i1 + d1, i2 + d2);
                    a >= 0 && b >= 0 && a < n1 && b < n2 && mask[(b * n1 + a) as usize]
                })
            })
        })
        .collect()
}

/// Edge agreement: binarized gradient magnitudes compared with a `dilation`
/// pixel tolerance applied symmetrically to precision and recall.
pub fn f_score_gradient(x_true: &Image, y: &Image, tau_g: f64, dilation: usize) -> Result<f64> {
    same_grid(x_true, y)?;
    check_tau(tau_g)?;
    let a = binarize(&gradient_magnitude(x_true), tau_g);
    let na = a.iter().filter(|v| **v).count();
    if na == 0 {
        return Err(Error::Degenerate("flat ground truth".into()));
    }
    let b = binarize(&gradient_magnitude(y), tau_g);
    let nb = b.iter().filter(|v| **v).count();
    if nb == 0 {
        return Ok(0.0);
    }
    let (da, db) = (dilate(&a, &x_true.grid, dilation), dilate(&b, &y.grid, dilation));
    let precision = b.iter().zip(&da).filter(|(x, y)| **x && **y).count() as f64 / nb as f64;
    let recall = a.iter().zip(&db).filter(|(x, y)| **x && **y).count() as f64 / na as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Sample mean and standard deviation (n - 1 normalization) per field.
pub fn batch_stats(reports: &[MetricReport]) -> Result<(MetricReport, MetricReport)> {
    if reports.len() < 2 {
        return Err(Error::Degenerate(format!("need at least two reports, got {}", reports.len())));
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 6];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 6];
    for r in reports {
        for ((s, v), m) in var.iter_mut().zip(r.values()).zip(mean) {
            *s += (v - m).powi(2) / (n - 1.0);
        }
    }
    Ok((MetricReport::from_values(mean), MetricReport::from_values(var.map(f64::sqrt))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn blob(grid: ImageGrid, shift: f64) -> Image {
        Image::from_fn(grid, |p| if (p[0] - shift).hypot(p[1] + 1.0) < 0.8 { 2.0 } else { 0.0 })
    }

    #[test]
    fn rel_error_examples() {
        let g = ImageGrid::reconstruction(32);
        let x = blob(g, 0.0);
        assert_eq!(rel_error(&x, &x).unwrap(), 0.0);
        assert_eq!(rel_error(&x, &Image::zeros(g)).unwrap(), 1.0);
        assert_abs_diff_eq!(rel_error(&x, &x.scaled(1.1)).unwrap(), 0.1, epsilon = 1e-12);
        assert!(rel_error(&Image::zeros(g), &x).is_err());
        let e = Image::from_fn(g, |p| 0.01 * p[0]);
        let y1 = Image::new(g, x.data.iter().zip(&e.data).map(|(a, b)| a + b).collect()).unwrap();
        let y3 = Image::new(g, x.data.iter().zip(&e.data).map(|(a, b)| a + 3.0 * b).collect()).unwrap();
        assert_abs_diff_eq!(rel_error(&x, &y3).unwrap(), 3.0 * rel_error(&x, &y1).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn support_examples() {
        let g = ImageGrid::new(0.0, 4.0, 0.0, 1.0, 4, 1).unwrap();
        let a = Image::new(g, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Image::new(g, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let c = Image::new(g, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(f_score_support(&a, &a, 0.1).unwrap(), 1.0);
        assert_eq!(f_score_support(&a, &c, 0.1).unwrap(), 0.0);
        assert_eq!(f_score_support(&a, &b, 0.1).unwrap(), 0.5);
        assert_eq!(f_score_support(&a, &b.scaled(7.0), 0.1).unwrap(), f_score_support(&b, &a, 0.1).unwrap());
        assert!(f_score_support(&Image::zeros(g), &a, 0.1).is_err());
        assert!(f_score_support(&a, &a, 1.0).is_err());
        let x = blob(ImageGrid::reconstruction(40), 0.2);
        for tau in [0.01, 0.3, 0.99] {
            assert_eq!(f_score_support(&x, &x, tau).unwrap(), 1.0);
        }
    }

    #[test]
    fn gradient_examples() {
        let g = ImageGrid::reconstruction(64);
        let x = blob(g, 0.0);
        assert_eq!(f_score_gradient(&x, &x, 0.2, 1).unwrap(), 1.0);
        let lifted = Image::new(g, x.data.iter().map(|v| v + 5.0).collect()).unwrap();
        assert_eq!(f_score_gradient(&x, &lifted, 0.2, 1).unwrap(), 1.0);
        let shifted = blob(g, 3.0 * g.dx1());
        let f = f_score_gradient(&x, &shifted, 0.2, 1).unwrap();
        assert!(f < 1.0, "{f}");
        assert_abs_diff_eq!(f, f_score_gradient(&shifted, &x, 0.2, 1).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            f,
            f_score_gradient(&x.scaled(3.0), &shifted.scaled(3.0), 0.2, 1).unwrap(),
            epsilon = 1e-12
        );
        // without tolerance the score is the plain overlap of the edge masks
        let a = binarize(&gradient_magnitude(&x), 0.2);
        let b = binarize(&gradient_magnitude(&shifted), 0.2);
        assert_abs_diff_eq!(f_score_gradient(&x, &shifted, 0.2, 0).unwrap(), dice(&a, &b), epsilon = 1e-12);
        assert!(f_score_gradient(&Image::zeros(g), &x, 0.2, 1).is_err());
    }

    #[test]
    fn stats() {
        let r = MetricReport { eps_ne: 0.3, ..Default::default() };
        let (m, s) = batch_stats(&[r, r, r]).unwrap();
        assert_eq!(m.eps_ne, 0.3);
        assert_eq!(s.eps_ne, 0.0);
        let z = MetricReport::default();
        let o = MetricReport { eps_ne: 1.0, ..Default::default() };
        let (m, s) = batch_stats(&[z, o]).unwrap();
        assert_eq!(m.eps_ne, 0.5);
        assert_abs_diff_eq!(s.eps_ne, 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(batch_stats(&[z]).is_err());
    }
}
