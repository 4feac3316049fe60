//! Data simulation, noise, and the four reconstruction methods.

mod alpha;
mod cgls;
mod jlam;
mod noise;
mod penalties;
mod smooth;

pub use alpha::{log_ladder, search_ladder, LadderSearch};
pub use cgls::{cgls_nonneg, CglsOptions};
pub use jlam::{
    reconstruct_jlam, reconstruct_jtv, reconstruct_lpls, reconstruct_tv_separate, JointPenalty, JointSystem, Product,
    Reconstruction, SmoothJointOptions, TvOptions,
};
pub use noise::{add_noise, simulate_data, NoisyData};
pub use penalties::{grad, grad_adjoint_add, gradient_check, lpls_integrand, HuberTv, Jtv, Lpls, Penalty};
pub use smooth::{mfista, SmoothOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, ImageGrid, LineSinogramGrid, ToricSinogramGrid};
use crate::operators::{assemble_radon, assemble_toric, check_len, derivative_filter, Branch, LinearMap, SparseLinearOperator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
}

/// Final iterate of an iterative solver, whether or not it met its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveReport {
    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.objective)
    }

    /// Turns a budget overrun into [`Error::NonConvergence`].
    pub fn require_converged(self, solver: &'static str) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence { solver, iterations: self.iterations })
        }
    }
}

/// All discretized operators of one experiment geometry.
#[derive(Clone, Debug)]
pub struct Operators {
    pub image: ImageGrid,
    pub lines: LineSinogramGrid,
    pub torics: ToricSinogramGrid,
    /// Line transform restricted to the admissible lines.
    pub radon_limited: SparseLinearOperator,
    pub radon: SparseLinearOperator,
    pub toric: SparseLinearOperator,
    /// Derivative filter on the full line sinogram.
    pub filter: SparseLinearOperator,
    pub m: usize,
}

impl Operators {
    pub fn assemble(geom: &GeometryConfig, m: usize) -> Result<Self> {
        let cfg = geom.scanner()?;
        let image = geom.image_grid()?;
        let lines = geom.line_grid()?;
        let torics = geom.toric_grid()?;
        let radon = assemble_radon(&image, &lines, false, &cfg)?;
        let radon_limited = assemble_radon(&image, &lines, true, &cfg)?;
        let toric = assemble_toric(&image, &torics, &cfg, Branch::Both)?;
        let filter = derivative_filter(&lines, m)?;
        Ok(Self { image, lines, torics, radon_limited, radon, toric, filter, m })
    }

    /// Rebuilds from previously assembled matrices, checking their shapes.
    pub fn from_parts(
        geom: &GeometryConfig,
        m: usize,
        radon_limited: SparseLinearOperator,
        radon: SparseLinearOperator,
        toric: SparseLinearOperator,
    ) -> Result<Self> {
        let image = geom.image_grid()?;
        let lines = geom.line_grid()?;
        let torics = geom.toric_grid()?;
        check_len(image.len(), radon.n_cols())?;
        check_len(image.len(), radon_limited.n_cols())?;
        check_len(image.len(), toric.n_cols())?;
        check_len(lines.len(), radon.n_rows())?;
        check_len(lines.active_count(), radon_limited.n_rows())?;
        check_len(torics.len(), toric.n_rows())?;
        let filter = derivative_filter(&lines, m)?;
        Ok(Self { image, lines, torics, radon_limited, radon, toric, filter, m })
    }
}

/// `[w A; B]` acting on `[x; y]` block-diagonally.
pub struct BlockDiag<'a> {
    pub a: &'a dyn LinearMap,
    pub b: &'a dyn LinearMap,
    pub w: f64,
}

impl LinearMap for BlockDiag<'_> {
    fn n_rows(&self) -> usize {
        self.a.n_rows() + self.b.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.a.n_cols() + self.b.n_cols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let (x1, x2) = x.split_at(self.a.n_cols());
        let (y1, y2) = y.split_at_mut(self.a.n_rows());
        self.a.apply_into(x1, y1);
        y1.iter_mut().for_each(|v| *v *= self.w);
        self.b.apply_into(x2, y2);
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let (x1, x2) = x.split_at_mut(self.a.n_cols());
        let (y1, y2) = y.split_at(self.a.n_rows());
        self.a.apply_adjoint_into(y1, x1);
        x1.iter_mut().for_each(|v| *v *= self.w);
        self.b.apply_adjoint_into(y2, x2);
    }
}
