//! Scanner constants, coordinate conventions and the discretization grids.
//!
//! Coordinates follow the scanner drawings: `x2` increases upward, the source
//! row `S` sits above the Compton detectors (whose circle centres lie on
//! `x2 = 2`) and the transmission detectors `D_A` lie at the bottom of the
//! tunnel, `x2 = 2 - r_m`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

/// Ordinate of the line holding every toric circle centre.
pub const CENTER_LINE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScannerConfig {
    /// Half-width of the source and detector arrays.
    pub a: f64,
    /// Tunnel parameter; the scan region is `2 - r_m < x2 < 1`.
    pub r_m: f64,
    /// Largest toric radius measured.
    pub r_max: f64,
    /// Height of the source row.
    pub source_height: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self { a: 4.0, r_m: 7.0, r_max: 9.0, source_height: 3.0 }
    }
}

impl ScannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::InvalidParameter(format!("a = {} must be positive", self.a)));
        }
        if !(self.r_m > 1.0 && self.r_max > self.r_m) {
            return Err(Error::InvalidParameter(format!(
                "need r_M > r_m > 1, got r_m = {}, r_M = {}",
                self.r_m, self.r_max
            )));
        }
        if !(self.source_height > self.detector_height()) {
            return Err(Error::InvalidParameter("source row must lie above the detectors".into()));
        }
        Ok(())
    }

    pub fn detector_height(&self) -> f64 {
        CENTER_LINE - self.r_m
    }

    pub fn source_line(&self) -> (Vec2, Vec2) {
        ([-self.a, self.source_height], [self.a, self.source_height])
    }

    pub fn detector_line(&self) -> (Vec2, Vec2) {
        let h = self.detector_height();
        ([-self.a, h], [self.a, h])
    }

    /// Midpoint between source and detector rows (the point `O` for the default scanner).
    pub fn center(&self) -> Vec2 {
        [0.0, 0.5 * (self.source_height + self.detector_height())]
    }

    pub fn in_scan_region(&self, x2: f64) -> bool {
        x2 < 1.0 && x2 > CENTER_LINE - self.r_m
    }
}

/// Uniform pixel grid over an axis-aligned rectangle.
///
/// Pixels are stored row-major with `x1` fastest; row 0 is the bottom row
/// (`x2` near `x2_min`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    pub n1: usize,
    pub n2: usize,
}

impl ImageGrid {
    pub fn new(x1_min: f64, x1_max: f64, x2_min: f64, x2_max: f64, n1: usize, n2: usize) -> Result<Self> {
        if !(x1_max > x1_min && x2_max > x2_min) || n1 == 0 || n2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "bad grid [{x1_min},{x1_max}]x[{x2_min},{x2_max}] at {n1}x{n2}"
            )));
        }
        Ok(Self { x1_min, x1_max, x2_min, x2_max, n1, n2 })
    }

    /// `[-2,2] x [-3,1]`, the reconstruction region.
    pub fn reconstruction(n: usize) -> Self {
        Self { x1_min: -2.0, x1_max: 2.0, x2_min: -3.0, x2_max: 1.0, n1: n, n2: n }
    }

    /// `[-3,3] x [-4,2]`, used for the nonlocal artifact study.
    pub fn extended(n: usize) -> Self {
        Self { x1_min: -3.0, x1_max: 3.0, x2_min: -4.0, x2_max: 2.0, n1: n, n2: n }
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx1(&self) -> f64 {
        (self.x1_max - self.x1_min) / self.n1 as f64
    }

    pub fn dx2(&self) -> f64 {
        (self.x2_max - self.x2_min) / self.n2 as f64
    }

    pub fn pixel_area(&self) -> f64 {
        self.dx1() * self.dx2()
    }

    pub fn pixel_diagonal(&self) -> f64 {
        self.dx1().hypot(self.dx2())
    }

    pub fn area(&self) -> f64 {
        (self.x1_max - self.x1_min) * (self.x2_max - self.x2_min)
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i2 * self.n1 + i1
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n1, idx / self.n1)
    }

    pub fn center(&self, i1: usize, i2: usize) -> Vec2 {
        [
            self.x1_min + (i1 as f64 + 0.5) * self.dx1(),
            self.x2_min + (i2 as f64 + 0.5) * self.dx2(),
        ]
    }

    pub fn center_of(&self, idx: usize) -> Vec2 {
        let (i1, i2) = self.coords(idx);
        self.center(i1, i2)
    }

    /// Pixel containing `p`, if any. Points on the far edges belong to the last pixel.
    pub fn locate(&self, p: Vec2) -> Option<usize> {
        let u = (p[0] - self.x1_min) / self.dx1();
        let v = (p[1] - self.x2_min) / self.dx2();
        if !(u >= 0.0 && v >= 0.0 && u <= self.n1 as f64 && v <= self.n2 as f64) {
            return None;
        }
        let i1 = (u as usize).min(self.n1 - 1);
        let i2 = (v as usize).min(self.n2 - 1);
        Some(self.index(i1, i2))
    }

    /// Distance from the origin to the farthest grid corner.
    pub fn circumradius(&self) -> f64 {
        let xs = [self.x1_min, self.x1_max];
        let ys = [self.x2_min, self.x2_max];
        xs.iter()
            .flat_map(|x| ys.iter().map(move |y| x.hypot(*y)))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.x1_min && p[0] <= self.x1_max && p[1] >= self.x2_min && p[1] <= self.x2_max
    }
}

/// Pixel values on an [`ImageGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub grid: ImageGrid,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self { grid, data: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: ImageGrid, f: impl Fn(Vec2) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.center_of(i))).collect();
        Self { grid, data }
    }

    pub fn new(grid: ImageGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), actual: data.len() });
        }
        Ok(Self { grid, data })
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.data[self.grid.index(i1, i2)]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|v| v * k).collect() }
    }
}

/// Samples of the toric data `T f(r, x0)`; rows are ordered `r`-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ToricSinogramGrid {
    pub r_samples: Vec<f64>,
    pub x0_samples: Vec<f64>,
}

impl ToricSinogramGrid {
    /// `r = 1 + r_step*j` for `j = 1..=n_r`, `x0 = -a + x0_step*j` for `j = 1..=n_x0`.
    pub fn uniform(n_r: usize, r_step: f64, n_x0: usize, x0_step: f64, cfg: &ScannerConfig) -> Result<Self> {
        let grid = Self {
            r_samples: (1..=n_r).map(|j| 1.0 + r_step * j as f64).collect(),
            x0_samples: (1..=n_x0).map(|j| -cfg.a + x0_step * j as f64).collect(),
        };
        grid.validate(cfg)?;
        Ok(grid)
    }

    pub fn default_for(cfg: &ScannerConfig) -> Result<Self> {
        Self::uniform(400, 0.02, 200, 0.04, cfg)
    }

    pub fn validate(&self, cfg: &ScannerConfig) -> Result<()> {
        if self.r_samples.is_empty() || self.x0_samples.is_empty() {
            return Err(Error::InvalidParameter("empty toric sinogram grid".into()));
        }
        for &r in &self.r_samples {
            if !(r > 1.0 && r <= cfg.r_max + 1e-9) {
                return Err(Error::InvalidParameter(format!("toric radius {r} outside (1, r_M]")));
            }
        }
        Ok(())
    }

    pub fn n_r(&self) -> usize {
        self.r_samples.len()
    }

    pub fn n_x0(&self) -> usize {
        self.x0_samples.len()
    }

    pub fn len(&self) -> usize {
        self.n_r() * self.n_x0()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, ir: usize, ix0: usize) -> usize {
        ir * self.n_x0() + ix0
    }

    pub fn r_step(&self) -> f64 {
        uniform_step(&self.r_samples)
    }

    pub fn x0_step(&self) -> f64 {
        uniform_step(&self.x0_samples)
    }
}

/// Samples of the line transform over `(s, theta)`, with the mask of lines
/// meeting both the source row and the transmission detectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSinogramGrid {
    pub s_samples: Vec<f64>,
    pub theta_samples: Vec<f64>,
    /// `mask[itheta * n_s + is]`.
    pub mask: Vec<bool>,
}

impl LineSinogramGrid {
    pub fn new(s_samples: Vec<f64>, theta_samples: Vec<f64>, cfg: &ScannerConfig) -> Result<Self> {
        if s_samples.is_empty() || theta_samples.is_empty() {
            return Err(Error::InvalidParameter("empty line sinogram grid".into()));
        }
        if let Some(t) = theta_samples.iter().find(|t| !(**t >= -FRAC_PI_2 && **t < FRAC_PI_2)) {
            return Err(Error::InvalidParameter(format!("theta {t} outside [-pi/2, pi/2)")));
        }
        let mask = theta_samples
            .iter()
            .flat_map(|&th| s_samples.iter().map(move |&s| in_h(s, th, cfg)))
            .collect();
        Ok(Self { s_samples, theta_samples, mask })
    }

    /// `n_theta` uniform angles on `[-pi/2, pi/2)`; offsets cover the grid
    /// circumradius with spacing `s_step` (pixel diagonal when `None`).
    pub fn for_image(img: &ImageGrid, n_theta: usize, s_step: Option<f64>, cfg: &ScannerConfig) -> Result<Self> {
        if n_theta == 0 {
            return Err(Error::InvalidParameter("n_theta must be positive".into()));
        }
        let ds = s_step.unwrap_or_else(|| img.pixel_diagonal());
        if !(ds > 0.0) {
            return Err(Error::InvalidParameter(format!("s step {ds} must be positive")));
        }
        let half = (img.circumradius() / ds).ceil() as i64;
        let s = (-half..=half).map(|k| k as f64 * ds).collect();
        let theta = (0..n_theta).map(|j| -FRAC_PI_2 + PI * j as f64 / n_theta as f64).collect();
        Self::new(s, theta, cfg)
    }

    pub fn n_s(&self) -> usize {
        self.s_samples.len()
    }

    pub fn n_theta(&self) -> usize {
        self.theta_samples.len()
    }

    pub fn len(&self) -> usize {
        self.n_s() * self.n_theta()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, itheta: usize, is: usize) -> usize {
        itheta * self.n_s() + is
    }

    pub fn s_step(&self) -> f64 {
        uniform_step(&self.s_samples)
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

fn uniform_step(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 1.0;
    }
    (samples[samples.len() - 1] - samples[0]) / (samples.len() - 1) as f64
}

/// The line `{x : x . Theta = s}`: returns the foot point `s Theta` and the
/// unit direction `(-sin theta, cos theta)`.
pub fn line_from_params(s: f64, theta: f64) -> (Vec2, Vec2) {
    let (sn, cs) = theta.sin_cos();
    ([s * cs, s * sn], [-sn, cs])
}

/// Whether `L(s, theta)` meets the horizontal segment `{x2 = h, |x1| <= a}`
/// (endpoints inclusive).
fn meets_row(s: f64, theta: f64, h: f64, a: f64) -> bool {
    let (sn, cs) = theta.sin_cos();
    (s - h * sn).abs() <= a * cs.abs()
}

/// Membership of `(s, theta)` in the sinogram set of lines meeting both the
/// source row and the transmission detector row.
pub fn in_h(s: f64, theta: f64, cfg: &ScannerConfig) -> bool {
    meets_row(s, theta, cfg.source_height, cfg.a) && meets_row(s, theta, cfg.detector_height(), cfg.a)
}

/// Offset of the line through the scanner centre at angle `theta`; the
/// admissible `s` interval for that angle is centred here.
pub fn h_center_offset(theta: f64, cfg: &ScannerConfig) -> f64 {
    cfg.center()[1] * theta.sin()
}

/// Circle pair of the toric section with parameters `(s, x0)`:
/// centres `c_j = ((-1)^j s + x0, 2)` and common radius `sqrt(s^2 + 1)`.
pub fn segment_circle_params(s: f64, x0: f64) -> Result<(Vec2, Vec2, f64)> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("toric parameter s = {s} must be positive")));
    }
    let r = (s * s + 1.0).sqrt();
    Ok(([x0 - s, CENTER_LINE], [x0 + s, CENTER_LINE], r))
}

/// Everything needed to build the default experiment geometry; loadable from
/// a flat key-value TOML file where every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub a: f64,
    pub r_m: f64,
    #[serde(rename = "r_M")]
    pub r_max: f64,
    pub source_height: f64,
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    pub n1: usize,
    pub n2: usize,
    pub n_r: usize,
    pub r_step: f64,
    pub n_x0: usize,
    pub x0_step: f64,
    pub n_theta: usize,
    /// Line offset spacing; pixel diagonal when absent.
    pub s_step: Option<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let sc = ScannerConfig::default();
        let g = ImageGrid::reconstruction(200);
        Self {
            a: sc.a,
            r_m: sc.r_m,
            r_max: sc.r_max,
            source_height: sc.source_height,
            x1_min: g.x1_min,
            x1_max: g.x1_max,
            x2_min: g.x2_min,
            x2_max: g.x2_max,
            n1: g.n1,
            n2: g.n2,
            n_r: 400,
            r_step: 0.02,
            n_x0: 200,
            x0_step: 0.04,
            n_theta: 180,
            s_step: None,
        }
    }
}

impl GeometryConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn scanner(&self) -> Result<ScannerConfig> {
        let sc = ScannerConfig { a: self.a, r_m: self.r_m, r_max: self.r_max, source_height: self.source_height };
        sc.validate()?;
        Ok(sc)
    }

    pub fn image_grid(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.x1_min, self.x1_max, self.x2_min, self.x2_max, self.n1, self.n2)
    }

    pub fn set_image_grid(&mut self, g: &ImageGrid) {
        self.x1_min = g.x1_min;
        self.x1_max = g.x1_max;
        self.x2_min = g.x2_min;
        self.x2_max = g.x2_max;
        self.n1 = g.n1;
        self.n2 = g.n2;
    }

    pub fn toric_grid(&self) -> Result<ToricSinogramGrid> {
        ToricSinogramGrid::uniform(self.n_r, self.r_step, self.n_x0, self.x0_step, &self.scanner()?)
    }

    pub fn line_grid(&self) -> Result<LineSinogramGrid> {
        LineSinogramGrid::for_image(&self.image_grid()?, self.n_theta, self.s_step, &self.scanner()?)
    }
}
