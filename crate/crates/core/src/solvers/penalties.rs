//! Smooth image penalties on physical forward-difference gradients
//! (Neumann boundary), integrated with the pixel area.

use crate::geometry::ImageGrid;

/// Forward differences per unit length; zero across the last column and row.
pub fn grad(grid: &ImageGrid, f: &[f64], g1: &mut [f64], g2: &mut [f64]) {
    let (n1, n2) = (grid.n1, grid.n2);
    let (h1, h2) = (1.0 / grid.dx1(), 1.0 / grid.dx2());
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            let k = i2 * n1 + i1;
            g1[k] = if i1 + 1 < n1 { (f[k + 1] - f[k]) * h1 } else { 0.0 };
            g2[k] = if i2 + 1 < n2 { (f[k + n1] - f[k]) * h2 } else { 0.0 };
        }
    }
}

/// Adjoint of [`grad`]; accumulates into `out`.
pub fn grad_adjoint_add(grid: &ImageGrid, v1: &[f64], v2: &[f64], out: &mut [f64]) {
    let (n1, n2) = (grid.n1, grid.n2);
    let (h1, h2) = (1.0 / grid.dx1(), 1.0 / grid.dx2());
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            let k = i2 * n1 + i1;
            let mut acc = 0.0;
            if i1 + 1 < n1 {
                acc -= v1[k] * h1;
            }
            if i1 > 0 {
                acc += v1[k - 1] * h1;
            }
            if i2 + 1 < n2 {
                acc -= v2[k] * h2;
            }
            if i2 > 0 {
                acc += v2[k - n1] * h2;
            }
            out[k] += acc;
        }
    }
}

/// A differentiable penalty on a vector of one or two stacked images.
pub trait Penalty: Sync {
    /// Value, adding `scale * gradient` into `grad_out` when present.
    fn value_grad(&self, x: &[f64], grad_out: Option<&mut [f64]>, scale: f64) -> f64;
}

/// Huber-smoothed total variation of a single image.
#[derive(Clone, Copy, Debug)]
pub struct HuberTv {
    pub grid: ImageGrid,
    pub delta: f64,
}

impl Penalty for HuberTv {
    fn value_grad(&self, x: &[f64], grad_out: Option<&mut [f64]>, scale: f64) -> f64 {
        let n = self.grid.len();
        let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
        grad(&self.grid, x, &mut g1, &mut g2);
        let area = self.grid.pixel_area();
        let d = self.delta;
        let mut val = 0.0;
        for k in 0..n {
            let t = g1[k].hypot(g2[k]);
            val += if t <= d { 0.5 * t * t / d } else { t - 0.5 * d };
            let w = scale * area / t.max(d);
            g1[k] *= w;
            g2[k] *= w;
        }
        if let Some(out) = grad_out {
            grad_adjoint_add(&self.grid, &g1, &g2, out);
        }
        area * val
    }
}

/// Joint total variation of `(mu, n)` stacked as `[mu; n]`.
#[derive(Clone, Copy, Debug)]
pub struct Jtv {
    pub grid: ImageGrid,
    pub beta: f64,
}

impl Penalty for Jtv {
    fn value_grad(&self, x: &[f64], grad_out: Option<&mut [f64]>, scale: f64) -> f64 {
        let n = self.grid.len();
        let (mu, ne) = x.split_at(n);
        let mut a = [vec![0.0; n], vec![0.0; n]];
        let mut b = [vec![0.0; n], vec![0.0; n]];
        {
            let [a1, a2] = &mut a;
            grad(&self.grid, mu, a1, a2);
            let [b1, b2] = &mut b;
            grad(&self.grid, ne, b1, b2);
        }
        let area = self.grid.pixel_area();
        let b2sq = self.beta * self.beta;
        let mut val = 0.0;
        for k in 0..n {
            let phi = (a[0][k].powi(2) + a[1][k].powi(2) + b[0][k].powi(2) + b[1][k].powi(2) + b2sq).sqrt();
            val += phi;
            let w = scale * area / phi;
            a[0][k] *= w;
            a[1][k] *= w;
            b[0][k] *= w;
            b[1][k] *= w;
        }
        if let Some(out) = grad_out {
            let (gm, gn) = out.split_at_mut(n);
            grad_adjoint_add(&self.grid, &a[0], &a[1], gm);
            grad_adjoint_add(&self.grid, &b[0], &b[1], gn);
        }
        area * val
    }
}

/// Pointwise linear-parallel-level-set integrand for gradients `a`, `b`.
pub fn lpls_integrand(a: [f64; 2], b: [f64; 2], beta: f64) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + beta * beta).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + beta * beta).sqrt();
    let ab = a[0] * b[0] + a[1] * b[1];
    na * nb - (ab * ab + beta.powi(4)).sqrt()
}

/// Linear parallel level sets penalty of `(mu, n)` stacked as `[mu; n]`.
#[derive(Clone, Copy, Debug)]
pub struct Lpls {
    pub grid: ImageGrid,
    pub beta: f64,
}

impl Penalty for Lpls {
    fn value_grad(&self, x: &[f64], grad_out: Option<&mut [f64]>, scale: f64) -> f64 {
        let n = self.grid.len();
        let (mu, ne) = x.split_at(n);
        let (mut a1, mut a2, mut b1, mut b2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        grad(&self.grid, mu, &mut a1, &mut a2);
        grad(&self.grid, ne, &mut b1, &mut b2);
        let area = self.grid.pixel_area();
        let beta2 = self.beta * self.beta;
        let mut val = 0.0;
        for k in 0..n {
            let (a, b) = ([a1[k], a2[k]], [b1[k], b2[k]]);
            let na = (a[0] * a[0] + a[1] * a[1] + beta2).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1] + beta2).sqrt();
            let ab = a[0] * b[0] + a[1] * b[1];
            let c = (ab * ab + beta2 * beta2).sqrt();
            val += na * nb - c;
            let w = scale * area;
            let (ra, rb) = (if na > 0.0 { nb / na } else { 0.0 }, if nb > 0.0 { na / nb } else { 0.0 });
            let q = if c > 0.0 { ab / c } else { 0.0 };
            a1[k] = w * (ra * a[0] - q * b[0]);
            a2[k] = w * (ra * a[1] - q * b[1]);
            b1[k] = w * (rb * b[0] - q * a[0]);
            b2[k] = w * (rb * b[1] - q * a[1]);
        }
        if let Some(out) = grad_out {
            let (gm, gn) = out.split_at_mut(n);
            grad_adjoint_add(&self.grid, &a1, &a2, gm);
            grad_adjoint_add(&self.grid, &b1, &b2, gn);
        }
        area * val
    }
}

/// Largest central-difference mismatch of `p`'s gradient relative to its scale,
/// probing every coordinate with step `h`.
pub fn gradient_check(p: &dyn Penalty, x: &[f64], h: f64) -> f64 {
    let mut g = vec![0.0; x.len()];
    p.value_grad(x, Some(&mut g), 1.0);
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    let gscale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..x.len() {
        let xi = xp[i];
        xp[i] = xi + h;
        let fp = p.value_grad(&xp, None, 1.0);
        xp[i] = xi - h;
        let fm = p.value_grad(&xp, None, 1.0);
        xp[i] = xi;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / gscale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn grad_adjoint_pairing() {
        let g = ImageGrid::new(0.0, 1.0, 0.0, 2.0, 7, 5).unwrap();
        let f = random(35, 1);
        let (v1, v2) = (random(35, 2), random(35, 3));
        let (mut g1, mut g2) = (vec![0.0; 35], vec![0.0; 35]);
        grad(&g, &f, &mut g1, &mut g2);
        let lhs: f64 = g1.iter().zip(&v1).chain(g2.iter().zip(&v2)).map(|(a, b)| a * b).sum();
        let mut out = vec![0.0; 35];
        grad_adjoint_add(&g, &v1, &v2, &mut out);
        let rhs: f64 = f.iter().zip(&out).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * lhs.abs());
    }

    #[test]
    fn jtv_of_zero_is_beta_times_area() {
        let g = ImageGrid::reconstruction(16);
        let p = Jtv { grid: g, beta: 0.01 };
        assert_abs_diff_eq!(p.value_grad(&vec![0.0; 512], None, 1.0), 0.01 * g.area(), epsilon = 1e-14);
    }

    #[test]
    fn lpls_pointwise_limits() {
        assert_abs_diff_eq!(lpls_integrand([1.0, 0.0], [1.0, 0.0], 0.0), 0.0);
        assert_abs_diff_eq!(lpls_integrand([0.6, 0.8], [-0.6, -0.8], 0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lpls_integrand([1.0, 0.0], [0.0, 1.0], 0.0), 1.0);
        assert!(lpls_integrand([1.0, 0.0], [0.0, 1.0], 0.1) > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = ImageGrid::new(0.0, 1.0, 0.0, 1.0, 8, 8).unwrap();
        let x = random(128, 4);
        assert!(gradient_check(&Jtv { grid: g, beta: 0.01 }, &x, 1e-6) < 1e-5);
        assert!(gradient_check(&Lpls { grid: g, beta: 0.01 }, &x, 1e-6) < 1e-5);
        assert!(gradient_check(&HuberTv { grid: g, delta: 0.5 }, &x[..64], 1e-6) < 1e-5);
    }
}
