use super::{Penalty, SolveReport, TraceRow};
use crate::error::{Error, Result};
use crate::operators::{check_len, dot, LinearMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothOptions {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the objective by less than this, relatively.
    pub tol: f64,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self { max_iters: 2000, tol: 1e-7 }
    }
}

struct Objective<'a> {
    a: &'a dyn LinearMap,
    b: &'a [f64],
    penalty: Option<(&'a dyn Penalty, f64)>,
}

impl Objective<'_> {
    /// Value at `x` given `ax = A x`; the gradient is written when asked.
    fn eval(&self, x: &[f64], ax: &[f64], grad: Option<&mut [f64]>) -> (f64, f64) {
        let r: Vec<f64> = ax.iter().zip(self.b).map(|(p, q)| p - q).collect();
        let data = 0.5 * dot(&r, &r);
        let mut pen = 0.0;
        match grad {
            Some(g) => {
                self.a.apply_adjoint_into(&r, g);
                if let Some((p, alpha)) = self.penalty {
                    pen = alpha * p.value_grad(x, Some(g), alpha);
                }
            }
            None => {
                if let Some((p, alpha)) = self.penalty {
                    pen = alpha * p.value_grad(x, None, 1.0);
                }
            }
        }
        (data + pen, (2.0 * data).sqrt())
    }
}

/// Monotone FISTA with backtracking for
/// `min 0.5 |A x - b|^2 + alpha P(x)` over `x >= 0`.
///
/// The step constant never decreases, starting from a one-vector secant
/// estimate of `|A|^2`. Products with `A` are tracked through the momentum
/// recursion, so each iteration costs one adjoint and one forward product per
/// backtracking trial.
pub fn mfista(
    a: &dyn LinearMap,
    b: &[f64],
    penalty: Option<(&dyn Penalty, f64)>,
    x0: Option<&[f64]>,
    opts: &SmoothOptions,
) -> Result<SolveReport> {
    check_len(a.n_rows(), b.len())?;
    if let Some((_, alpha)) = penalty {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("regularization weight {alpha} must be nonnegative")));
        }
    }
    let n = a.n_cols();
    let obj = Objective { a, b, penalty };
    let mut x: Vec<f64> = match x0 {
        Some(v) => {
            check_len(n, v.len())?;
            v.iter().map(|t| t.max(0.0)).collect()
        }
        None => vec![0.0; n],
    };
    let mut ax = a.apply(&x)?;
    let (mut fx, res) = obj.eval(&x, &ax, None);
    let mut trace = vec![TraceRow { iter: 0, objective: fx, residual: res }];

    let mut lip = {
        let probe: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let ap = a.apply(&probe)?;
        (dot(&ap, &ap) / dot(&probe, &probe)).max(1e-12)
    };

    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut x_prev = x.clone();
    let mut ax_prev = ax.clone();
    let mut t = 1.0f64;
    let mut g = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut az = vec![0.0; a.n_rows()];
    let mut converged = false;
    let mut iters = 0;

    for k in 1..=opts.max_iters {
        iters = k;
        let (fy, _) = obj.eval(&y, &ay, Some(&mut g));
        let (fz, rz) = loop {
            for i in 0..n {
                z[i] = (y[i] - g[i] / lip).max(0.0);
            }
            a.apply_into(&z, &mut az);
            let (fz, rz) = obj.eval(&z, &az, None);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for i in 0..n {
                let d = z[i] - y[i];
                lin += g[i] * d;
                quad += d * d;
            }
            if fz <= fy + lin + 0.5 * lip * quad + 1e-14 * fy.abs() || quad == 0.0 {
                break (fz, rz);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::Degenerate("step constant overflowed".into()));
            }
        };

        let accepted = fz <= fx;
        std::mem::swap(&mut x_prev, &mut x);
        std::mem::swap(&mut ax_prev, &mut ax);
        let f_old = fx;
        if accepted {
            x.copy_from_slice(&z);
            ax.copy_from_slice(&az);
            fx = fz;
        } else {
            x.copy_from_slice(&x_prev);
            ax.copy_from_slice(&ax_prev);
        }
        let residual = if accepted { rz } else { trace.last().unwrap().residual };
        trace.push(TraceRow { iter: k, objective: fx, residual });

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (c1, c2) = (t / t_next, (t - 1.0) / t_next);
        for i in 0..n {
            y[i] = x[i] + c1 * (z[i] - x[i]) + c2 * (x[i] - x_prev[i]);
        }
        for i in 0..ay.len() {
            ay[i] = ax[i] + c1 * (az[i] - ax[i]) + c2 * (ax[i] - ax_prev[i]);
        }
        t = t_next;

        if accepted && f_old - fx <= opts.tol * fx.abs() {
            converged = true;
            break;
        }
    }
    Ok(SolveReport { x, trace, iterations: iters, converged })
}
