use super::{SolveReport, TraceRow};
use crate::error::Result;
use crate::operators::{check_len, dot, LinearMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CglsOptions {
    /// CGLS iterations per restart.
    pub max_iters: usize,
    pub max_restarts: usize,
    /// Restarts stop once one lowers the objective by less than this, relatively.
    pub tol: f64,
    /// Relative free-set gradient norm that ends a CGLS run.
    pub grad_tol: f64,
}

impl Default for CglsOptions {
    fn default() -> Self {
        Self { max_iters: 200, max_restarts: 10, tol: 1e-3, grad_tol: 1e-8 }
    }
}

const BACKTRACK: usize = 30;

fn objective(r: &[f64]) -> f64 {
    0.5 * dot(r, r)
}

/// Nonnegative least squares `min ||A x - b||^2, x >= 0` by restarted CGLS.
///
/// Each restart runs CGLS over the free variables (positive, or at zero with
/// a descent direction into the feasible set). An infeasible CGLS end point
/// is projected onto `x >= 0`; when that raises the objective the step is
/// halved along the projected path, and failing that the restart falls back
/// to a projected steepest-descent step. The objective never increases.
pub fn cgls_nonneg(a: &dyn LinearMap, b: &[f64], x0: Option<&[f64]>, opts: &CglsOptions) -> Result<SolveReport> {
    check_len(a.n_rows(), b.len())?;
    let n = a.n_cols();
    let mut x = match x0 {
        Some(v) => {
            check_len(n, v.len())?;
            v.iter().map(|t| t.max(0.0)).collect()
        }
        None => vec![0.0; n],
    };
    let mut ax = vec![0.0; a.n_rows()];
    a.apply_into(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut f = objective(&r);
    let mut trace = vec![TraceRow { iter: 0, objective: f, residual: (2.0 * f).sqrt() }];
    let mut g = vec![0.0; n];
    let mut total = 0;
    let mut converged = false;

    let mut q = vec![0.0; a.n_rows()];
    for _restart in 0..opts.max_restarts.max(1) {
        // free set from the current gradient A^T r (negative objective gradient)
        a.apply_adjoint_into(&r, &mut g);
        let free: Vec<bool> = x.iter().zip(&g).map(|(xi, gi)| *xi > 0.0 || *gi > 0.0).collect();
        let mut s: Vec<f64> = g.iter().zip(&free).map(|(gi, fr)| if *fr { *gi } else { 0.0 }).collect();
        let s0 = dot(&s, &s).sqrt();
        if s0 == 0.0 {
            converged = true;
            break;
        }

        let x_start = x.clone();
        let mut xc = x.clone();
        let mut rc = r.clone();
        let mut p = s.clone();
        let mut gamma = dot(&s, &s);
        for _ in 0..opts.max_iters {
            a.apply_into(&p, &mut q);
            let qq = dot(&q, &q);
            if qq == 0.0 {
                break;
            }
            let step = gamma / qq;
            xc.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += step * pi);
            rc.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= step * qi);
            a.apply_adjoint_into(&rc, &mut s);
            s.iter_mut().zip(&free).for_each(|(si, fr)| {
                if !fr {
                    *si = 0.0
                }
            });
            let gnew = dot(&s, &s);
            total += 1;
            if gnew.sqrt() <= opts.grad_tol * s0 {
                break;
            }
            let beta = gnew / gamma;
            gamma = gnew;
            p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
        }

        let f_start = f;
        if xc.iter().all(|v| *v >= 0.0) {
            x = xc;
        } else {
            // projections along x_start -> xc, then projected steepest descent
            let eval = |cand: &[f64], ax: &mut Vec<f64>| {
                a.apply_into(cand, ax);
                0.5 * b.iter().zip(ax.iter()).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>()
            };
            let mut accepted = None;
            let mut t = 1.0;
            for _ in 0..BACKTRACK {
                let cand: Vec<f64> = x_start.iter().zip(&xc).map(|(s, c)| (s + t * (c - s)).max(0.0)).collect();
                if eval(&cand, &mut ax) < f_start {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_none() {
                let d: Vec<f64> = g.iter().zip(&free).map(|(gi, fr)| if *fr { *gi } else { 0.0 }).collect();
                a.apply_into(&d, &mut q);
                let mut t = dot(&d, &d) / dot(&q, &q).max(f64::MIN_POSITIVE);
                for _ in 0..BACKTRACK {
                    let cand: Vec<f64> = x_start.iter().zip(&d).map(|(s, di)| (s + t * di).max(0.0)).collect();
                    if eval(&cand, &mut ax) < f_start {
                        accepted = Some(cand);
                        break;
                    }
                    t *= 0.5;
                }
            }
            if let Some(c) = accepted {
                x = c;
            }
        }
        // refresh the residual to shed drift from the recurrences
        a.apply_into(&x, &mut ax);
        r.iter_mut().zip(b.iter().zip(&ax)).for_each(|(ri, (bi, ai))| *ri = bi - ai);
        f = objective(&r);
        trace.push(TraceRow { iter: total, objective: f, residual: (2.0 * f).sqrt() });
        if f_start - f <= opts.tol * f_start.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(SolveReport { x, trace, iterations: total, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::SparseLinearOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases() {
        let id = SparseLinearOperator::identity(5);
        let b = [1.0, 2.0, 0.5, 3.0, 0.0];
        let rep = cgls_nonneg(&id, &b, None, &CglsOptions::default()).unwrap();
        for (x, y) in rep.x.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let b = [1.0, -2.0, 0.5, -3.0, 4.0];
        let rep = cgls_nonneg(&id, &b, None, &CglsOptions::default()).unwrap();
        for (x, y) in rep.x.iter().zip(&b) {
            assert!((x - y.max(0.0)).abs() < 1e-12);
        }
    }

    /// Projected gradient descent run to high precision.
    fn projected_gradient(a: &SparseLinearOperator, b: &[f64], lip: f64) -> Vec<f64> {
        let mut x = vec![0.0; a.n_cols()];
        for _ in 0..200_000 {
            let r: Vec<f64> = a.apply(&x).unwrap().iter().zip(b).map(|(p, q)| p - q).collect();
            let g = a.apply_adjoint(&r).unwrap();
            x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi = (*xi - gi / lip).max(0.0));
        }
        x
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut trip = Vec::new();
        for r in 0..30 {
            for c in 0..20 {
                let diag = if r == c { 3.0 } else { 0.0 };
                trip.push((r, c, diag + rng.random::<f64>() - 0.5));
            }
        }
        let a = SparseLinearOperator::from_triplets(30, 20, &trip).unwrap();
        let b: Vec<f64> = (0..30).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let lip = crate::operators::spectral_norm(&a, 1000, 1e-10).unwrap().powi(2) * 1.01;
        let oracle = projected_gradient(&a, &b, lip);
        let f = |x: &[f64]| {
            let r: Vec<f64> = a.apply(x).unwrap().iter().zip(&b).map(|(p, q)| p - q).collect();
            0.5 * dot(&r, &r)
        };
        let opts = CglsOptions { max_iters: 200, max_restarts: 50, tol: 1e-12, grad_tol: 1e-12 };
        let rep = cgls_nonneg(&a, &b, None, &opts).unwrap();
        assert!(rep.x.iter().all(|v| *v >= 0.0));
        assert!(oracle.iter().any(|v| *v == 0.0), "oracle should have active constraints");
        assert!((f(&rep.x) - f(&oracle)).abs() <= 1e-6, "{} vs {}", f(&rep.x), f(&oracle));
        for w in rep.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12);
        }
        assert!(rep.trace.last().unwrap().objective <= 0.5 * dot(&b, &b));
    }
}
