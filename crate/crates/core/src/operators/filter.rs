use super::SparseLinearOperator;
use crate::error::{Error, Result};
use crate::geometry::{LineSinogramGrid, ToricSinogramGrid};

/// Layout of the sinogram variable a derivative filter differentiates along.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterAxis {
    /// Samples along the filtered variable.
    pub len: usize,
    /// Row stride between neighbouring samples of that variable.
    pub stride: usize,
    /// Number of independent lines being filtered.
    pub lines: usize,
    pub spacing: f64,
}

pub trait Filterable {
    fn filter_axis(&self) -> FilterAxis;
}

impl Filterable for ToricSinogramGrid {
    /// Along `r`, the slow index.
    fn filter_axis(&self) -> FilterAxis {
        FilterAxis { len: self.n_r(), stride: self.n_x0(), lines: self.n_x0(), spacing: self.r_step() }
    }
}

impl Filterable for LineSinogramGrid {
    /// Along `s`, the fast index.
    fn filter_axis(&self) -> FilterAxis {
        FilterAxis { len: self.n_s(), stride: 1, lines: self.n_theta(), spacing: self.s_step() }
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Centred finite-difference stencil of order `m` at unit spacing.
pub fn derivative_stencil(m: usize) -> Vec<f64> {
    let mut st = vec![1.0];
    for _ in 0..m / 2 {
        st = convolve(&st, &[1.0, -2.0, 1.0]);
    }
    if m % 2 == 1 {
        st = convolve(&st, &[-0.5, 0.0, 0.5]);
    }
    st
}

/// `m`-th derivative along the filtered sinogram variable, with zeros assumed
/// beyond both ends.
pub fn derivative_filter(grid: &impl Filterable, m: usize) -> Result<SparseLinearOperator> {
    if m == 0 {
        return Err(Error::InvalidParameter("derivative order must be at least 1".into()));
    }
    let ax = grid.filter_axis();
    let st: Vec<f64> = derivative_stencil(m).iter().map(|w| w / ax.spacing.powi(m as i32)).collect();
    let half = (st.len() / 2) as isize;
    let n = ax.len * ax.lines;
    let mut rows = vec![Vec::new(); n];
    for line in 0..ax.lines {
        // base row of this line: toric lines are columns (stride = n_x0), line sinograms are blocks
        let base = if ax.stride == 1 { line * ax.len } else { line };
        for i in 0..ax.len as isize {
            let row = base + i as usize * ax.stride;
            for (k, w) in st.iter().enumerate() {
                let j = i + k as isize - half;
                if j >= 0 && j < ax.len as isize && *w != 0.0 {
                    rows[row].push(((base + j as usize * ax.stride) as u32, *w));
                }
            }
        }
    }
    SparseLinearOperator::from_rows(n, rows, (0..n).collect())
}
