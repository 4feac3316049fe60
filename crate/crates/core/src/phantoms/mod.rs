//! Test objects as paired electron-density and attenuation images.

mod materials;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Image, ImageGrid, Vec2};

pub use materials::{fit_nu, Material, MaterialTable, NuFit, ORIGIN_FRACTION, OUTLIER_T};

pub const BACKGROUND: &str = "air";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rectangle { center: Vec2, half_axes: Vec2, material: String },
    Ellipse { center: Vec2, half_axes: Vec2, material: String },
    Triangle { vertices: [Vec2; 3], material: String },
    /// Plus sign of arm half-length `half_length`; the stroke is a whole
    /// number of pixels and the centre snaps to a pixel centre when rendered.
    Cross { center: Vec2, half_length: f64, stroke_px: usize, material: String },
}

fn cross2(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

impl Shape {
    pub fn material(&self) -> &str {
        match self {
            Shape::Rectangle { material, .. }
            | Shape::Ellipse { material, .. }
            | Shape::Triangle { material, .. }
            | Shape::Cross { material, .. } => material,
        }
    }

    fn snapped_center(center: Vec2, grid: &ImageGrid) -> Vec2 {
        grid.locate(center).map_or(center, |i| grid.center_of(i))
    }

    pub fn contains(&self, p: Vec2, grid: &ImageGrid) -> bool {
        match self {
            Shape::Rectangle { center, half_axes, .. } => {
                (p[0] - center[0]).abs() <= half_axes[0] && (p[1] - center[1]).abs() <= half_axes[1]
            }
            Shape::Ellipse { center, half_axes, .. } => {
                ((p[0] - center[0]) / half_axes[0]).powi(2) + ((p[1] - center[1]) / half_axes[1]).powi(2) <= 1.0
            }
            Shape::Triangle { vertices: [a, b, c], .. } => {
                let (d1, d2, d3) = (cross2(*a, *b, p), cross2(*b, *c, p), cross2(*c, *a, p));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
            Shape::Cross { center, half_length, stroke_px, .. } => {
                let c = Self::snapped_center(*center, grid);
                let (u, v) = ((p[0] - c[0]).abs(), (p[1] - c[1]).abs());
                let (w1, w2) = (0.5 * *stroke_px as f64 * grid.dx1(), 0.5 * *stroke_px as f64 * grid.dx2());
                (u < w1 && v <= *half_length) || (v < w2 && u <= *half_length)
            }
        }
    }

    /// Area of the continuous shape; for the cross, the stroke at the given grid.
    pub fn area(&self, grid: &ImageGrid) -> f64 {
        match self {
            Shape::Rectangle { half_axes, .. } => 4.0 * half_axes[0] * half_axes[1],
            Shape::Ellipse { half_axes, .. } => std::f64::consts::PI * half_axes[0] * half_axes[1],
            Shape::Triangle { vertices: [a, b, c], .. } => 0.5 * cross2(*a, *b, *c).abs(),
            Shape::Cross { half_length, stroke_px, .. } => {
                let w = *stroke_px as f64 * grid.dx1();
                2.0 * (2.0 * half_length * w) - w * w
            }
        }
    }

    pub fn centroid(&self, grid: &ImageGrid) -> Vec2 {
        match self {
            Shape::Rectangle { center, .. } | Shape::Ellipse { center, .. } => *center,
            Shape::Cross { center, .. } => Self::snapped_center(*center, grid),
            Shape::Triangle { vertices: [a, b, c], .. } => [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0],
        }
    }
}

/// A named list of shapes; later shapes paint over earlier ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomDescription {
    pub name: String,
    pub version: u32,
    #[serde(rename = "shape")]
    pub shapes: Vec<Shape>,
}

impl PhantomDescription {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn builtin(kind: PhantomKind) -> Self {
        let text = match kind {
            PhantomKind::Simple => include_str!("../../data/phantoms/simple.toml"),
            PhantomKind::Complex => include_str!("../../data/phantoms/complex.toml"),
            PhantomKind::Bar => include_str!("../../data/phantoms/bar.toml"),
        };
        Self::from_toml_str(text).expect("bundled phantom description parses")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Simple,
    Complex,
    Bar,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 3] = [PhantomKind::Simple, PhantomKind::Complex, PhantomKind::Bar];

    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Simple => "simple",
            PhantomKind::Complex => "complex",
            PhantomKind::Bar => "bar",
        }
    }
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(PhantomKind::Simple),
            "complex" => Ok(PhantomKind::Complex),
            "bar" => Ok(PhantomKind::Bar),
            other => Err(Error::Config(format!("unknown phantom {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomPair {
    pub grid: ImageGrid,
    pub n_e: Image,
    pub mu: Image,
    /// 0 for background, `k` for pixels painted by shape `k - 1`.
    pub labels: Vec<u8>,
    /// Material of each label, background first.
    pub region_materials: Vec<Material>,
}

impl PhantomPair {
    pub fn render(desc: &PhantomDescription, grid: &ImageGrid, table: &MaterialTable) -> Result<Self> {
        if desc.shapes.len() >= u8::MAX as usize {
            return Err(Error::InvalidParameter("too many shapes".into()));
        }
        let mut region_materials = vec![table.get(BACKGROUND)?.clone()];
        for s in &desc.shapes {
            region_materials.push(table.get(s.material())?.clone());
        }
        let labels: Vec<u8> = (0..grid.len())
            .map(|idx| {
                let p = grid.center_of(idx);
                desc.shapes.iter().rposition(|s| s.contains(p, grid)).map_or(0, |k| k as u8 + 1)
            })
            .collect();
        Ok(Self::from_labels(*grid, labels, region_materials))
    }

    fn from_labels(grid: ImageGrid, labels: Vec<u8>, region_materials: Vec<Material>) -> Self {
        let n_e = labels.iter().map(|l| region_materials[*l as usize].n_e).collect();
        let mu = labels.iter().map(|l| region_materials[*l as usize].mu).collect();
        Self { grid, n_e: Image { grid, data: n_e }, mu: Image { grid, data: mu }, labels, region_materials }
    }

    pub fn builtin(kind: PhantomKind, grid: &ImageGrid, table: &MaterialTable) -> Result<Self> {
        Self::render(&PhantomDescription::builtin(kind), grid, table)
    }

    pub fn n_regions(&self) -> usize {
        self.region_materials.len() - 1
    }

    pub fn region_mask(&self, label: u8) -> Vec<bool> {
        self.labels.iter().map(|l| *l == label).collect()
    }

    /// Pixel count and centroid of a labelled region.
    pub fn region_stats(&self, label: u8) -> (usize, Vec2) {
        let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
        for (idx, l) in self.labels.iter().enumerate() {
            if *l == label {
                let p = self.grid.center_of(idx);
                n += 1;
                sx += p[0];
                sy += p[1];
            }
        }
        (n, if n > 0 { [sx / n as f64, sy / n as f64] } else { [f64::NAN; 2] })
    }

    /// Reassigns every non-background region a material drawn uniformly from
    /// `table` (background rows excluded); values stay paired per material.
    pub fn randomize_materials(&self, table: &MaterialTable, seed: u64) -> Result<Self> {
        let pool: Vec<&Material> = table.materials.iter().filter(|m| m.name != BACKGROUND).collect();
        if pool.is_empty() {
            return Err(Error::Degenerate("no materials to draw from".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mats = vec![self.region_materials[0].clone()];
        for _ in 1..self.region_materials.len() {
            mats.push(pool[rng.random_range(0..pool.len())].clone());
        }
        Ok(Self::from_labels(self.grid, self.labels.clone(), mats))
    }
}
