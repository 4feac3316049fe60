use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cgls_nonneg, mfista, BlockDiag, CglsOptions, HuberTv, Jtv, Lpls, NoisyData, Operators, Penalty};
use super::{SmoothOptions, SolveReport};
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::operators::{check_len, norm2, spectral_norm, LinearMap, SparseLinearOperator};

/// `outer * inner` without forming the product matrix.
#[derive(Clone, Copy, Debug)]
pub struct Product<'a> {
    pub outer: &'a SparseLinearOperator,
    pub inner: &'a SparseLinearOperator,
}

impl LinearMap for Product<'_> {
    fn n_rows(&self) -> usize {
        self.outer.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; self.inner.n_rows()];
        self.inner.apply_into(x, &mut t);
        self.outer.apply_into(&t, y);
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let mut t = vec![0.0; self.inner.n_rows()];
        self.outer.apply_adjoint_into(y, &mut t);
        self.inner.apply_adjoint_into(&t, x);
    }
}

const NORM_ITERS: usize = 300;
const NORM_TOL: f64 = 1e-5;

/// Stacked least-squares system
/// `[w R_L, 0; 0, T; alpha D R, -alpha nu D R]` on `[mu; n_e]`.
#[derive(Clone, Debug)]
pub struct JointSystem<'a> {
    pub ops: &'a Operators,
    /// `D_m R`, applied factor by factor.
    pub filtered_radon: Product<'a>,
    pub w: f64,
    pub nu: f64,
    pub alpha: f64,
    pub norm_toric: f64,
    pub norm_radon_limited: f64,
    pub norm_filtered: f64,
}

impl<'a> JointSystem<'a> {
    /// Estimates the block weight `|T| / |R_L|` by power iteration.
    pub fn new(ops: &'a Operators, nu: f64, alpha: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu = {nu} must be positive")));
        }
        let filtered_radon = Product { outer: &ops.filter, inner: &ops.radon };
        let norm_toric = spectral_norm(&ops.toric, NORM_ITERS, NORM_TOL)?;
        let norm_radon_limited = spectral_norm(&ops.radon_limited, NORM_ITERS, NORM_TOL)?;
        let norm_filtered = spectral_norm(&filtered_radon, NORM_ITERS, NORM_TOL)?;
        let sys = Self {
            ops,
            filtered_radon,
            w: norm_toric / norm_radon_limited,
            nu,
            alpha: 1.0,
            norm_toric,
            norm_radon_limited,
            norm_filtered,
        };
        sys.with_alpha(alpha)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be nonnegative")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    fn n_pix(&self) -> usize {
        self.ops.image.len()
    }

    /// Right-hand side `[w b1; b2; 0]`.
    pub fn rhs(&self, data: &NoisyData) -> Result<Vec<f64>> {
        check_len(self.ops.radon_limited.n_rows(), data.b1.len())?;
        check_len(self.ops.toric.n_rows(), data.b2.len())?;
        let mut b: Vec<f64> = data.b1.iter().map(|v| self.w * v).collect();
        b.extend_from_slice(&data.b2);
        b.resize(self.n_rows(), 0.0);
        Ok(b)
    }

    /// `|D R (mu - nu n_e)|`.
    pub fn coupling_norm(&self, mu: &[f64], n_e: &[f64]) -> Result<f64> {
        let d: Vec<f64> = mu.iter().zip(n_e).map(|(m, n)| m - self.nu * n).collect();
        Ok(norm2(&self.filtered_radon.apply(&d)?))
    }

    /// Weighted data blocks only, on `[mu; n_e]`.
    pub fn data_map(&self) -> BlockDiag<'_> {
        BlockDiag { a: &self.ops.radon_limited, b: &self.ops.toric, w: self.w }
    }

    pub fn data_rhs(&self, data: &NoisyData) -> Result<Vec<f64>> {
        let mut b = self.rhs(data)?;
        b.truncate(self.ops.radon_limited.n_rows() + self.ops.toric.n_rows());
        Ok(b)
    }
}

impl LinearMap for JointSystem<'_> {
    fn n_rows(&self) -> usize {
        self.ops.radon_limited.n_rows() + self.ops.toric.n_rows() + self.filtered_radon.n_rows()
    }

    fn n_cols(&self) -> usize {
        2 * self.n_pix()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let (mu, ne) = x.split_at(self.n_pix());
        let (y1, rest) = y.split_at_mut(self.ops.radon_limited.n_rows());
        let (y2, y3) = rest.split_at_mut(self.ops.toric.n_rows());
        self.ops.radon_limited.apply_into(mu, y1);
        y1.iter_mut().for_each(|v| *v *= self.w);
        self.ops.toric.apply_into(ne, y2);
        let d: Vec<f64> = mu.iter().zip(ne).map(|(m, n)| m - self.nu * n).collect();
        self.filtered_radon.apply_into(&d, y3);
        y3.iter_mut().for_each(|v| *v *= self.alpha);
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let (mu, ne) = x.split_at_mut(self.n_pix());
        let (y1, rest) = y.split_at(self.ops.radon_limited.n_rows());
        let (y2, y3) = rest.split_at(self.ops.toric.n_rows());
        self.ops.radon_limited.apply_adjoint_into(y1, mu);
        self.ops.toric.apply_adjoint_into(y2, ne);
        let mut c = vec![0.0; self.n_pix()];
        self.filtered_radon.apply_adjoint_into(y3, &mut c);
        for i in 0..c.len() {
            mu[i] = self.w * mu[i] + self.alpha * c[i];
            ne[i] -= self.alpha * self.nu * c[i];
        }
    }
}

/// Reconstructed pair with the solver runs that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub mu: Image,
    pub n_e: Image,
    /// One entry per solve, labelled by what it reconstructed.
    pub solves: Vec<(String, SolveReport)>,
}

impl Reconstruction {
    pub fn converged(&self) -> bool {
        self.solves.iter().all(|(_, r)| r.converged)
    }

    pub fn iterations(&self) -> usize {
        self.solves.iter().map(|(_, r)| r.iterations).sum()
    }

    fn split(ops: &Operators, label: &str, rep: SolveReport) -> Result<Self> {
        let n = ops.image.len();
        let mu = Image::new(ops.image, rep.x[..n].to_vec())?;
        let n_e = Image::new(ops.image, rep.x[n..].to_vec())?;
        Ok(Self { mu, n_e, solves: vec![(label.to_string(), rep)] })
    }
}

pub fn reconstruct_jlam(sys: &JointSystem, data: &NoisyData, opts: &CglsOptions) -> Result<Reconstruction> {
    let b = sys.rhs(data)?;
    let rep = cgls_nonneg(sys, &b, None, opts)?;
    Reconstruction::split(sys.ops, "joint", rep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvOptions {
    /// Huber corner of the smoothed gradient norm, per unit length.
    pub delta: f64,
    pub smooth: SmoothOptions,
}

impl Default for TvOptions {
    fn default() -> Self {
        Self { delta: 0.05, smooth: SmoothOptions::default() }
    }
}

/// Independent TV-regularized fits of `mu` to `b1` and `n_e` to `b2`.
pub fn reconstruct_tv_separate(
    ops: &Operators,
    data: &NoisyData,
    alpha_mu: f64,
    alpha_ne: f64,
    opts: &TvOptions,
) -> Result<Reconstruction> {
    let tv = HuberTv { grid: ops.image, delta: opts.delta };
    let rm = mfista(&ops.radon_limited, &data.b1, Some((&tv, alpha_mu)), None, &opts.smooth)?;
    let rn = mfista(&ops.toric, &data.b2, Some((&tv, alpha_ne)), None, &opts.smooth)?;
    Ok(Reconstruction {
        mu: Image::new(ops.image, rm.x.clone())?,
        n_e: Image::new(ops.image, rn.x.clone())?,
        solves: vec![("mu".into(), rm), ("n_e".into(), rn)],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointPenalty {
    Jtv,
    Lpls,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothJointOptions {
    pub beta: f64,
    pub smooth: SmoothOptions,
    /// Extra randomly perturbed starts; the lowest objective wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SmoothJointOptions {
    fn default() -> Self {
        Self { beta: 0.01, smooth: SmoothOptions::default(), restarts: 0, seed: 0 }
    }
}

fn reconstruct_smooth_joint(
    sys: &JointSystem,
    data: &NoisyData,
    alpha: f64,
    kind: JointPenalty,
    opts: &SmoothJointOptions,
) -> Result<Reconstruction> {
    let grid = sys.ops.image;
    let penalty: Box<dyn Penalty> = match kind {
        JointPenalty::Jtv => Box::new(Jtv { grid, beta: opts.beta }),
        JointPenalty::Lpls => Box::new(Lpls { grid, beta: opts.beta }),
    };
    let a = sys.data_map();
    let b = sys.data_rhs(data)?;
    let label = match kind {
        JointPenalty::Jtv => "jtv",
        JointPenalty::Lpls => "lpls",
    };
    let mut best = mfista(&a, &b, Some((penalty.as_ref(), alpha)), None, &opts.smooth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        let scale = best.x.iter().fold(0.0f64, |m, v| m.max(*v));
        let x0: Vec<f64> = best.x.iter().map(|v| v + 0.1 * scale * rng.random::<f64>()).collect();
        let rep = mfista(&a, &b, Some((penalty.as_ref(), alpha)), Some(&x0), &opts.smooth)?;
        if rep.objective() < best.objective() {
            best = rep;
        }
    }
    Reconstruction::split(sys.ops, label, best)
}

/// Joint total variation on the weighted data blocks of `sys`.
pub fn reconstruct_jtv(sys: &JointSystem, data: &NoisyData, alpha: f64, opts: &SmoothJointOptions) -> Result<Reconstruction> {
    reconstruct_smooth_joint(sys, data, alpha, JointPenalty::Jtv, opts)
}

/// Linear parallel level sets on the weighted data blocks of `sys`.
pub fn reconstruct_lpls(sys: &JointSystem, data: &NoisyData, alpha: f64, opts: &SmoothJointOptions) -> Result<Reconstruction> {
    reconstruct_smooth_joint(sys, data, alpha, JointPenalty::Lpls, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryConfig, ImageGrid};
    use crate::operators::dot;
    use crate::phantoms::{MaterialTable, PhantomKind, PhantomPair};
    use crate::solvers::simulate_data;

    fn small_ops() -> Operators {
        let mut geom = GeometryConfig { n_r: 48, r_step: 0.16, n_x0: 40, x0_step: 0.2, n_theta: 60, ..Default::default() };
        geom.set_image_grid(&ImageGrid::reconstruction(24));
        Operators::assemble(&geom, 2).unwrap()
    }

    #[test]
    fn stacked_adjoint() {
        let ops = small_ops();
        let sys = JointSystem::new(&ops, 0.57, 0.3).unwrap();
        let x: Vec<f64> = (0..sys.n_cols()).map(|k| ((k * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..sys.n_rows()).map(|k| ((k * 13) % 7) as f64 - 3.0).collect();
        let lhs = dot(&sys.apply(&x).unwrap(), &y);
        let rhs = dot(&x, &sys.apply_adjoint(&y).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12 * norm2(&sys.apply(&x).unwrap()) * norm2(&y));
        assert!(sys.w > 0.0);
    }

    #[test]
    fn tiny_alpha_fits_noiseless_data() {
        let ops = small_ops();
        let p = PhantomPair::builtin(PhantomKind::Simple, &ops.image, &MaterialTable::builtin()).unwrap();
        let (b1, b2) = simulate_data(&p, &ops).unwrap();
        let data = NoisyData::new(&b1, &b2, 0.0, 0).unwrap();
        let sys = JointSystem::new(&ops, 0.57, 1e-8).unwrap();
        let rec = reconstruct_jlam(&sys, &data, &CglsOptions { max_iters: 400, max_restarts: 20, tol: 1e-10, grad_tol: 1e-12 }).unwrap();
        let rb1 = ops.radon_limited.apply(&rec.mu.data).unwrap();
        let rb2 = ops.toric.apply(&rec.n_e.data).unwrap();
        let e1: Vec<f64> = rb1.iter().zip(&b1).map(|(a, b)| a - b).collect();
        let e2: Vec<f64> = rb2.iter().zip(&b2).map(|(a, b)| a - b).collect();
        assert!(norm2(&e1) < 1e-3 * norm2(&b1), "{}", norm2(&e1) / norm2(&b1));
        assert!(norm2(&e2) < 1e-3 * norm2(&b2), "{}", norm2(&e2) / norm2(&b2));
        assert!(rec.mu.data.iter().chain(&rec.n_e.data).all(|v| *v >= 0.0));
    }

    #[test]
    fn regularization_lowers_coupling() {
        let ops = small_ops();
        let table = MaterialTable::builtin();
        let p = PhantomPair::builtin(PhantomKind::Simple, &ops.image, &table).unwrap();
        let (b1, b2) = simulate_data(&p, &ops).unwrap();
        let data = NoisyData::new(&b1, &b2, 0.1, 3).unwrap();
        let nu = 0.57;
        let weak = JointSystem::new(&ops, nu, 1e-6).unwrap();
        let strong = weak.clone().with_alpha(weak.norm_toric / weak.norm_filtered).unwrap();
        let opts = CglsOptions::default();
        let rw = reconstruct_jlam(&weak, &data, &opts).unwrap();
        let rs = reconstruct_jlam(&strong, &data, &opts).unwrap();
        let cw = strong.coupling_norm(&rw.mu.data, &rw.n_e.data).unwrap();
        let cs = strong.coupling_norm(&rs.mu.data, &rs.n_e.data).unwrap();
        assert!(cs < cw, "{cs} vs {cw}");
        assert!(rs.solves[0].1.trace.windows(2).all(|w| w[1].objective <= w[0].objective + 1e-9));
    }

    #[test]
    fn tv_objective_beats_unregularized_solution() {
        let ops = small_ops();
        let p = PhantomPair::builtin(PhantomKind::Simple, &ops.image, &MaterialTable::builtin()).unwrap();
        let (b1, b2) = simulate_data(&p, &ops).unwrap();
        let data = NoisyData::new(&b1, &b2, 0.1, 5).unwrap();
        let opts = TvOptions::default();
        let tv = HuberTv { grid: ops.image, delta: opts.delta };
        let free = reconstruct_tv_separate(&ops, &data, 0.0, 0.0, &opts).unwrap();
        let reg = reconstruct_tv_separate(&ops, &data, 0.05, 0.5, &opts).unwrap();
        for (f, r) in [(&free.mu, &reg.mu), (&free.n_e, &reg.n_e)] {
            assert!(tv.value_grad(&r.data, None, 1.0) <= tv.value_grad(&f.data, None, 1.0));
        }
        assert_eq!(reg.solves.len(), 2);
    }

    #[test]
    fn joint_smooth_methods_run() {
        let ops = small_ops();
        let p = PhantomPair::builtin(PhantomKind::Simple, &ops.image, &MaterialTable::builtin()).unwrap();
        let (b1, b2) = simulate_data(&p, &ops).unwrap();
        let data = NoisyData::new(&b1, &b2, 0.1, 5).unwrap();
        let sys = JointSystem::new(&ops, 0.57, 0.0).unwrap();
        let opts = SmoothJointOptions { smooth: SmoothOptions { max_iters: 300, tol: 1e-7 }, restarts: 1, ..Default::default() };
        let j = reconstruct_jtv(&sys, &data, 0.1, &opts).unwrap();
        let l = reconstruct_lpls(&sys, &data, 0.1, &opts).unwrap();
        for r in [&j, &l] {
            assert!(r.mu.data.iter().chain(&r.n_e.data).all(|v| *v >= 0.0));
            assert!(r.solves[0].1.trace.windows(2).all(|w| w[1].objective <= w[0].objective));
        }
    }
}
