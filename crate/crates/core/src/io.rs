//! File formats: raw float grids, point lists, objective traces, metric tables.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Image, ImageGrid, LineSinogramGrid, ToricSinogramGrid, Vec2};
use crate::metrics::MetricReport;
use crate::operators::check_len;
use crate::solvers::TraceRow;

/// Row-major grid of `n2` rows by `n1` columns over `[x1_min, x1_max] x [x2_min, x2_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGrid {
    pub n1: usize,
    pub n2: usize,
    pub extent: [f64; 4],
    pub data: Vec<f64>,
}

impl RawGrid {
    pub fn new(n1: usize, n2: usize, extent: [f64; 4], data: Vec<f64>) -> Result<Self> {
        check_len(n1 * n2, data.len())?;
        Ok(Self { n1, n2, extent, data })
    }

    pub fn from_image(img: &Image) -> Self {
        let g = &img.grid;
        Self { n1: g.n1, n2: g.n2, extent: [g.x1_min, g.x1_max, g.x2_min, g.x2_max], data: img.data.clone() }
    }

    pub fn to_image(&self) -> Result<Image> {
        let [a, b, c, d] = self.extent;
        Image::new(ImageGrid::new(a, b, c, d, self.n1, self.n2)?, self.data.clone())
    }

    /// Line sinogram with `s` along the first axis; `values` may cover only the
    /// labelled rows, the rest are left at zero.
    pub fn from_line_sinogram(sino: &LineSinogramGrid, labels: &[usize], values: &[f64]) -> Result<Self> {
        check_len(labels.len(), values.len())?;
        let mut data = vec![0.0; sino.len()];
        for (&l, &v) in labels.iter().zip(values) {
            data[l] = v;
        }
        let s = &sino.s_samples;
        let t = &sino.theta_samples;
        Self::new(sino.n_s(), sino.n_theta(), [s[0], s[s.len() - 1], t[0], t[t.len() - 1]], data)
    }

    /// Toric sinogram with `x0` along the first axis and `r` along the second.
    pub fn from_toric_sinogram(sino: &ToricSinogramGrid, values: &[f64]) -> Result<Self> {
        let x = &sino.x0_samples;
        let r = &sino.r_samples;
        Self::new(sino.n_x0(), sino.n_r(), [x[0], x[x.len() - 1], r[0], r[r.len() - 1]], values.to_vec())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let [a, b, c, d] = self.extent;
        writeln!(w, "{} {} {a:?} {b:?} {c:?} {d:?}", self.n1, self.n2)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(format!("header needs 6 fields, got {}", fields.len())));
        }
        let n1: usize = fields[0].parse().map_err(|_| bad("bad n1".into()))?;
        let n2: usize = fields[1].parse().map_err(|_| bad("bad n2".into()))?;
        let mut extent = [0.0; 4];
        for (e, f) in extent.iter_mut().zip(&fields[2..]) {
            *e = f.parse().map_err(|_| bad(format!("bad extent {f:?}")))?;
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n1 * n2 * 8 {
            return Err(bad(format!("expected {} bytes of data, found {}", n1 * n2 * 8, bytes.len())));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { n1, n2, extent, data })
    }
}

/// One `x1 x2` pair per line.
pub fn write_points(path: &Path, pts: &[Vec2]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in pts {
        writeln!(w, "{:?} {:?}", p[0], p[1])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<Vec<Vec2>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format { path: path.to_path_buf(), msg: format!("line {}: not numeric", k + 1) })?;
        if v.len() != 2 {
            return Err(Error::Format { path: path.to_path_buf(), msg: format!("line {}: expected 2 values", k + 1) });
        }
        out.push([v[0], v[1]]);
    }
    Ok(out)
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "objective", "residual"])?;
    for t in trace {
        w.write_record([t.iter.to_string(), format!("{:?}", t.objective), format!("{:?}", t.residual)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}

/// Metrics down the rows, one column per method.
pub fn write_metric_table(path: &Path, columns: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["metric".to_string()];
    head.extend(columns.iter().map(|c| c.0.clone()));
    w.write_record(&head)?;
    for (i, name) in MetricReport::FIELDS.iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend(columns.iter().map(|c| format!("{:?}", c.1.values()[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Batch version of [`write_metric_table`] with `<method>_mean` and `<method>_std` columns.
pub fn write_metric_stats(path: &Path, columns: &[(String, MetricReport, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["metric".to_string()];
    for c in columns {
        head.push(format!("{}_mean", c.0));
        head.push(format!("{}_std", c.0));
    }
    w.write_record(&head)?;
    for (i, name) in MetricReport::FIELDS.iter().enumerate() {
        let mut row = vec![name.to_string()];
        for c in columns {
            row.push(format!("{:?}", c.1.values()[i]));
            row.push(format!("{:?}", c.2.values()[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a table written by [`write_metric_table`] back into columns.
pub fn read_metric_table(path: &Path) -> Result<Vec<(String, MetricReport)>> {
    let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut vals = vec![[0.0; 6]; names.len()];
    let mut seen = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if i >= 6 || rec.len() != names.len() + 1 {
            return Err(bad(format!("unexpected row {}", i + 1)));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            vals[j][i] = cell.parse().map_err(|_| bad(format!("bad value {cell:?}")))?;
        }
        seen += 1;
    }
    if seen != 6 {
        return Err(bad(format!("expected 6 metric rows, found {seen}")));
    }
    Ok(names
        .into_iter()
        .zip(vals)
        .map(|(n, v)| {
            let m = MetricReport {
                eps_ne: v[0],
                eps_mu: v[1],
                f_supp_ne: v[2],
                f_grad_ne: v[3],
                f_supp_mu: v[4],
                f_grad_mu: v[5],
            };
            (n, m)
        })
        .collect())
}
