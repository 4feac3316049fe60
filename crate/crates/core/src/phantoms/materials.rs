use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../data/materials.csv");

/// Electron density in units of 1e24 electrons per cm^3, attenuation at 100 keV in 1/cm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub n_e: f64,
    #[serde(rename = "mu_100keV")]
    pub mu: f64,
    #[serde(default)]
    pub z_eff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialTable {
    pub materials: Vec<Material>,
}

impl MaterialTable {
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let materials = rd.deserialize().collect::<std::result::Result<Vec<Material>, _>>()?;
        for m in &materials {
            if !(m.n_e >= 0.0 && m.mu >= 0.0) {
                return Err(Error::InvalidParameter(format!("material {} has negative values", m.name)));
            }
        }
        if materials.is_empty() {
            return Err(Error::Degenerate("material table is empty".into()));
        }
        Ok(Self { materials })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text).map_err(|e| match e {
            Error::Csv(c) => Error::Format { path: path.to_path_buf(), msg: c.to_string() },
            other => other,
        })
    }

    /// The curated table shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_csv_str(DEFAULT_TABLE).expect("bundled material table parses")
    }

    pub fn get(&self, name: &str) -> Result<&Material> {
        self.materials
            .iter()
            .find(|m| m.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown material {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn max_n_e(&self) -> f64 {
        self.materials.iter().map(|m| m.n_e).fold(0.0, f64::max)
    }
}

/// Outcome of the straight-line fit `mu = nu * n_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct NuFit {
    pub nu: f64,
    /// Materials discarded as outliers, in removal order.
    pub outliers: Vec<String>,
    /// Materials dropped for sitting at the origin.
    pub near_origin: Vec<String>,
    pub used: usize,
}

pub const OUTLIER_T: f64 = 3.0;
pub const ORIGIN_FRACTION: f64 = 0.01;

fn slope(pts: &[(f64, f64)]) -> f64 {
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    sxy / sxx
}

/// Largest externally studentized residual of the through-origin fit, if any exceeds `limit`.
fn worst_outlier(pts: &[(f64, f64)], limit: f64) -> Option<usize> {
    let n = pts.len();
    if n < 4 {
        return None;
    }
    let nu = slope(pts);
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let res: Vec<f64> = pts.iter().map(|(x, y)| y - nu * x).collect();
    let sse: f64 = res.iter().map(|e| e * e).sum();
    let scale: f64 = pts.iter().map(|(_, y)| y * y).sum();
    if sse <= 1e-24 * scale {
        return None;
    }
    let mut worst = None;
    let mut worst_t = limit;
    for (i, ((x, _), e)) in pts.iter().zip(&res).enumerate() {
        let h = x * x / sxx;
        if h >= 1.0 - 1e-12 {
            continue;
        }
        let s2 = (sse - e * e / (1.0 - h)) / (n - 2) as f64;
        let t = if s2 > 0.0 { e.abs() / (s2 * (1.0 - h)).sqrt() } else { f64::INFINITY };
        if t > worst_t {
            worst_t = t;
            worst = Some(i);
        }
    }
    worst
}

/// Through-origin least-squares slope of attenuation against electron
/// density over materials with effective Z below `z_threshold` (materials
/// without a recorded Z are kept). Outliers are removed one at a time while
/// some externally studentized residual exceeds 3; then points with both
/// values under 1% of the table maximum are dropped.
pub fn fit_nu(table: &MaterialTable, z_threshold: f64) -> Result<NuFit> {
    let mut pool: Vec<&Material> =
        table.materials.iter().filter(|m| m.z_eff.is_none_or(|z| z < z_threshold)).collect();
    if pool.len() < 3 {
        return Err(Error::Degenerate(format!("only {} materials to fit", pool.len())));
    }
    let mut outliers = Vec::new();
    loop {
        let pts: Vec<(f64, f64)> = pool.iter().map(|m| (m.n_e, m.mu)).collect();
        match worst_outlier(&pts, OUTLIER_T) {
            Some(i) => outliers.push(pool.remove(i).name.clone()),
            None => break,
        }
    }
    let max_n = pool.iter().map(|m| m.n_e).fold(0.0, f64::max);
    let max_mu = pool.iter().map(|m| m.mu).fold(0.0, f64::max);
    let (origin, kept): (Vec<&Material>, Vec<&Material>) =
        pool.into_iter().partition(|m| m.n_e < ORIGIN_FRACTION * max_n && m.mu < ORIGIN_FRACTION * max_mu);
    let pts: Vec<(f64, f64)> = kept.iter().map(|m| (m.n_e, m.mu)).collect();
    if pts.len() < 2 || pts.iter().all(|p| p.0 == 0.0) {
        return Err(Error::Degenerate("no materials left after filtering".into()));
    }
    Ok(NuFit {
        nu: slope(&pts),
        outliers,
        near_origin: origin.iter().map(|m| m.name.clone()).collect(),
        used: pts.len(),
    })
}
