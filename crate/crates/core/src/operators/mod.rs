//! Sparse discretizations of the line and toric transforms.

mod filter;
mod radon;
mod toric;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use filter::{derivative_filter, derivative_stencil, FilterAxis, Filterable};
pub use radon::{assemble_radon, chord_lengths};
pub use toric::{assemble_toric, backproject_toric_continuous, Branch};

/// Something with a forward and an adjoint matrix-vector product.
pub trait LinearMap: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);
    /// `x = A^T y`; `x` is overwritten.
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_cols(), x.len())?;
        let mut y = vec![0.0; self.n_rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_rows(), y.len())?;
        let mut x = vec![0.0; self.n_cols()];
        self.apply_adjoint_into(y, &mut x);
        Ok(x)
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Row-compressed sparse matrix that also keeps its transpose, so forward and
/// adjoint products are both row-parallel and read the same weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseLinearOperator {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    t_ptr: Vec<usize>,
    t_rows: Vec<u32>,
    t_vals: Vec<f64>,
    /// Sinogram sample realized by each row.
    pub row_labels: Vec<usize>,
}

impl SparseLinearOperator {
    /// Builds from per-row entry lists. Columns within a row are sorted and
    /// duplicate columns summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(u32, f64)>>, row_labels: Vec<usize>) -> Result<Self> {
        check_len(rows.len(), row_labels.len())?;
        let n_rows = rows.len();
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (c, w) in row {
                if c as usize >= n_cols {
                    return Err(Error::InvalidParameter(format!("column {c} out of range {n_cols}")));
                }
                if last == Some(c) {
                    *vals.last_mut().unwrap() += w;
                } else {
                    cols.push(c);
                    vals.push(w);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self::finish(n_rows, n_cols, row_ptr, cols, vals, row_labels))
    }

    /// Builds from (row, col, weight) triplets in any order.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_rows];
        for &(r, c, w) in triplets {
            if r >= n_rows {
                return Err(Error::InvalidParameter(format!("row {r} out of range {n_rows}")));
            }
            rows[r].push((c as u32, w));
        }
        Self::from_rows(n_cols, rows, (0..n_rows).collect())
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let rows = d.iter().enumerate().map(|(i, &w)| vec![(i as u32, w)]).collect();
        Self::from_rows(d.len(), rows, (0..d.len()).collect()).expect("diagonal is well formed")
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    fn finish(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
        row_labels: Vec<usize>,
    ) -> Self {
        let mut counts = vec![0usize; n_cols + 1];
        for &c in &cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..n_cols {
            counts[i + 1] += counts[i];
        }
        let t_ptr = counts.clone();
        let mut fill = counts;
        let mut t_rows = vec![0u32; cols.len()];
        let mut t_vals = vec![0.0; cols.len()];
        for r in 0..n_rows {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = cols[k] as usize;
                t_rows[fill[c]] = r as u32;
                t_vals[fill[c]] = vals[k];
                fill[c] += 1;
            }
        }
        Self { n_rows, n_cols, row_ptr, cols, vals, t_ptr, t_rows, t_vals, row_labels }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().zip(&self.vals[span]).map(|(c, v)| (*c as usize, *v))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, w)| (r, c, w)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).map(|e| e.1).sum()).collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_weight(&self) -> f64 {
        self.vals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Entrywise sum with a matrix of the same shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_len(self.n_rows, other.n_rows)?;
        check_len(self.n_cols, other.n_cols)?;
        let rows = (0..self.n_rows)
            .map(|r| self.row(r).chain(other.row(r)).map(|(c, w)| (c as u32, w)).collect())
            .collect();
        Self::from_rows(self.n_cols, rows, self.row_labels.clone())
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let rows = keep.iter().map(|&r| self.row(r).map(|(c, w)| (c as u32, w)).collect()).collect();
        let labels = keep.iter().map(|&r| self.row_labels[r]).collect();
        Self::from_rows(self.n_cols, rows, labels).expect("rows come from a valid operator")
    }

    /// Sparse product `self * rhs`.
    pub fn compose(&self, rhs: &Self) -> Result<Self> {
        check_len(self.n_cols, rhs.n_rows)?;
        let rows = (0..self.n_rows)
            .into_par_iter()
            .map(|r| {
                let mut acc: Vec<(u32, f64)> = Vec::new();
                for (k, a) in self.row(r) {
                    acc.extend(rhs.row(k).map(|(c, b)| (c as u32, a * b)));
                }
                acc
            })
            .collect();
        Self::from_rows(rhs.n_cols, rows, self.row_labels.clone())
    }

    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:?}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_triplets(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad header token {t:?}"))))
            .collect::<Result<_>>()?;
        let [n_rows, n_cols, nnz] = dims[..] else {
            return Err(bad(format!("header needs 3 fields, got {}", dims.len())));
        };
        let mut trip = Vec::with_capacity(nnz);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut field = |name: &str| it.next().ok_or_else(|| bad(format!("line {}: missing {name}", k + 2)));
            let r = field("row")?.parse().map_err(|_| bad(format!("line {}: bad row", k + 2)))?;
            let c = field("col")?.parse().map_err(|_| bad(format!("line {}: bad col", k + 2)))?;
            let v = field("weight")?.parse().map_err(|_| bad(format!("line {}: bad weight", k + 2)))?;
            if r >= n_rows || c >= n_cols {
                return Err(bad(format!("line {}: index out of range", k + 2)));
            }
            trip.push((r, c, v));
        }
        if trip.len() != nnz {
            return Err(bad(format!("header says {nnz} entries, found {}", trip.len())));
        }
        Self::from_triplets(n_rows, n_cols, &trip)
    }
}

const BINARY_MAGIC: &[u8; 8] = b"CTJSPM01";

impl SparseLinearOperator {
    /// Compact little-endian dump of the row-compressed arrays and labels.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for v in [self.n_rows, self.n_cols, self.nnz()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for &p in &self.row_ptr {
            w.write_all(&(p as u64).to_le_bytes())?;
        }
        for &c in &self.cols {
            w.write_all(&c.to_le_bytes())?;
        }
        for &v in &self.vals {
            w.write_all(&v.to_le_bytes())?;
        }
        for &l in &self.row_labels {
            w.write_all(&(l as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl std::io::Read) -> Result<Self> {
        let bad = |msg: &str| Error::Degenerate(format!("operator cache: {msg}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(bad("bad magic"));
        }
        let u64s = |n: usize, r: &mut dyn std::io::Read| -> Result<Vec<usize>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize).collect())
        };
        let dims = u64s(3, r)?;
        let (n_rows, n_cols, nnz) = (dims[0], dims[1], dims[2]);
        let row_ptr = u64s(n_rows + 1, r)?;
        let mut buf = vec![0u8; nnz * 4];
        r.read_exact(&mut buf)?;
        let cols: Vec<u32> = buf.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        let mut buf = vec![0u8; nnz * 8];
        r.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let row_labels = u64s(n_rows, r)?;
        let monotone = row_ptr.first() == Some(&0) && row_ptr.windows(2).all(|w| w[0] <= w[1]);
        if !monotone || row_ptr[n_rows] != nnz || cols.iter().any(|&c| c as usize >= n_cols) {
            return Err(bad("inconsistent arrays"));
        }
        Ok(Self::finish(n_rows, n_cols, row_ptr, cols, vals, row_labels))
    }
}

impl LinearMap for SparseLinearOperator {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().with_min_len(256).enumerate().for_each(|(r, out)| {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let mut acc = 0.0;
            for (c, v) in self.cols[span.clone()].iter().zip(&self.vals[span]) {
                acc += v * x[*c as usize];
            }
            *out = acc;
        });
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        x.par_iter_mut().with_min_len(256).enumerate().for_each(|(c, out)| {
            let span = self.t_ptr[c]..self.t_ptr[c + 1];
            let mut acc = 0.0;
            for (r, v) in self.t_rows[span.clone()].iter().zip(&self.t_vals[span]) {
                acc += v * y[*r as usize];
            }
            *out = acc;
        });
    }
}

/// Largest singular value by power iteration on `A^T A`.
///
/// Converged once successive estimates differ by less than `tol` relatively.
pub fn spectral_norm(op: &dyn LinearMap, max_iters: usize, tol: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..op.n_cols()).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut av = vec![0.0; op.n_rows()];
    let mut prev = 0.0;
    normalize(&mut v);
    for it in 1..=max_iters.max(1) {
        op.apply_into(&v, &mut av);
        op.apply_adjoint_into(&av, &mut v);
        let lam = normalize(&mut v);
        if lam == 0.0 {
            return Err(Error::Degenerate("operator annihilated the power iterate".into()));
        }
        let est = lam.sqrt();
        if it > 1 && (est - prev).abs() <= tol * est {
            return Ok(est);
        }
        prev = est;
    }
    Err(Error::SpectralNonConvergence { estimate: prev, iterations: max_iters })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_matrix(n: usize, m: usize, seed: u64) -> Vec<(usize, usize, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .flat_map(|r| (0..m).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, rng.random::<f64>() * 2.0 - 1.0))
            .collect()
    }

    #[test]
    fn zero_in_zero_out() {
        let op = SparseLinearOperator::from_triplets(3, 4, &random_matrix(3, 4, 1)).unwrap();
        assert_eq!(op.apply(&[0.0; 4]).unwrap(), vec![0.0; 3]);
        assert_eq!(op.apply_adjoint(&[0.0; 3]).unwrap(), vec![0.0; 4]);
        assert!(matches!(op.apply(&[0.0; 3]), Err(Error::DimensionMismatch { expected: 4, actual: 3 })));
    }

    #[test]
    fn duplicates_merge_and_transpose_matches() {
        let op = SparseLinearOperator::from_triplets(2, 3, &[(0, 2, 1.0), (0, 2, 0.5), (1, 0, 2.0), (0, 0, -1.0)])
            .unwrap();
        assert_eq!(op.nnz(), 3);
        assert_eq!(op.apply(&[1.0, 10.0, 100.0]).unwrap(), vec![149.0, 2.0]);
        assert_eq!(op.apply_adjoint(&[1.0, 1.0]).unwrap(), vec![1.0, 0.0, 1.5]);
    }

    #[test]
    fn spectral_norm_examples() {
        let d = SparseLinearOperator::diagonal(&[3.0, 1.0]);
        assert_relative_eq!(spectral_norm(&d, 200, 1e-10).unwrap(), 3.0, max_relative = 1e-8);
        let id = SparseLinearOperator::identity(17);
        assert_relative_eq!(spectral_norm(&id, 200, 1e-10).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn spectral_norm_matches_dense_svd() {
        let t = random_matrix(20, 20, 7);
        let op = SparseLinearOperator::from_triplets(20, 20, &t).unwrap();
        let dense = nalgebra::DMatrix::from_fn(20, 20, |r, c| t[r * 20 + c].2);
        let sigma = dense.singular_values().max();
        let est = spectral_norm(&op, 5000, 1e-9).unwrap();
        assert_relative_eq!(est, sigma, max_relative = 1e-3);
    }

    #[test]
    fn spectral_norm_reports_stall() {
        // nearly equal singular values converge slowly; with tol = 0 and three
        // iterations the last estimate comes back in the error
        let op = SparseLinearOperator::diagonal(&[2.0, 1.999]);
        match spectral_norm(&op, 3, 0.0) {
            Err(Error::SpectralNonConvergence { estimate, iterations }) => {
                assert_eq!(iterations, 3);
                assert!((estimate - 2.0).abs() < 0.01);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compose_and_add() {
        let a = SparseLinearOperator::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]).unwrap();
        let b = SparseLinearOperator::from_triplets(2, 2, &[(0, 0, 4.0), (1, 0, 5.0)]).unwrap();
        let ab = a.compose(&b).unwrap();
        assert_eq!(ab.apply(&[1.0, 0.0]).unwrap(), vec![14.0, 15.0]);
        let s = a.add(&b).unwrap();
        assert_eq!(s.apply(&[1.0, 1.0]).unwrap(), vec![7.0, 8.0]);
    }

    #[test]
    fn triplet_file_roundtrip() {
        let t = random_matrix(5, 6, 3);
        let op = SparseLinearOperator::from_triplets(5, 6, &t).unwrap();
        let dir = std::env::temp_dir().join(format!("ctjoint-trip-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("op.txt");
        op.write_triplets(&path).unwrap();
        let back = SparseLinearOperator::read_triplets(&path).unwrap();
        assert_eq!(back.apply(&[1.0; 6]).unwrap(), op.apply(&[1.0; 6]).unwrap());
        assert_eq!(back.triplets().collect::<Vec<_>>(), op.triplets().collect::<Vec<_>>());
        std::fs::write(&path, "2 2 1\n0 5 1.0\n").unwrap();
        assert!(matches!(SparseLinearOperator::read_triplets(&path), Err(Error::Format { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn binary_roundtrip() {
        let t = random_matrix(7, 4, 8);
        let op = SparseLinearOperator::from_triplets(7, 4, &t).unwrap().select_rows(&[6, 2, 3]);
        let mut buf = Vec::new();
        op.write_binary(&mut buf).unwrap();
        let back = SparseLinearOperator::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, op);
        buf[8] ^= 1;
        assert!(SparseLinearOperator::read_binary(&mut buf.as_slice()).is_err());
        assert!(SparseLinearOperator::read_binary(&mut &b"nonsense"[..]).is_err());
    }
}
