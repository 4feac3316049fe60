//! The reconstruction protocol: phantom, data, noise, weight search, solve, score.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, Image, ImageGrid};
use crate::metrics::{rel_error, MetricConfig, MetricReport};
use crate::operators::{norm2, LinearMap};
use crate::phantoms::{fit_nu, MaterialTable, PhantomKind, PhantomPair};
use crate::solvers::{
    log_ladder, mfista, reconstruct_jlam, reconstruct_jtv, reconstruct_lpls, reconstruct_tv_separate, search_ladder,
    simulate_data, CglsOptions, HuberTv, JointSystem, LadderSearch, NoisyData, Operators, Reconstruction, SmoothJointOptions,
    SmoothOptions, TvOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tv,
    Jlam,
    Jtv,
    Lpls,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tv, Method::Jlam, Method::Jtv, Method::Lpls];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tv => "tv",
            Method::Jlam => "jlam",
            Method::Jtv => "jtv",
            Method::Lpls => "lpls",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Tv => "TV",
            Method::Jlam => "JLAM",
            Method::Jtv => "JTV",
            Method::Lpls => "LPLS",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected tv, jlam, jtv or lpls")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fixed regularization weight or a ladder search against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum AlphaChoice {
    #[default]
    Auto,
    Value(f64),
}

impl FromStr for AlphaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(AlphaChoice::Auto);
        }
        let v: f64 = s.trim().parse().map_err(|_| Error::Config(format!("alpha must be \"auto\" or a number, got {s:?}")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("alpha = {v} must be finite and nonnegative")));
        }
        Ok(AlphaChoice::Value(v))
    }
}

impl fmt::Display for AlphaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaChoice::Auto => f.write_str("auto"),
            AlphaChoice::Value(v) => write!(f, "{v:?}"),
        }
    }
}

impl Serialize for AlphaChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaChoice::Auto => s.serialize_str("auto"),
            AlphaChoice::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(v) => AlphaChoice::from_str(&v.to_string()),
            Raw::Int(v) => AlphaChoice::from_str(&v.to_string()),
            Raw::Text(t) => AlphaChoice::from_str(&t),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    #[default]
    Default,
    Extended,
}

impl GridKind {
    pub fn grid(self, n: usize) -> ImageGrid {
        match self {
            GridKind::Default => ImageGrid::reconstruction(n),
            GridKind::Extended => ImageGrid::extended(n),
        }
    }
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(GridKind::Default),
            "extended" => Ok(GridKind::Extended),
            other => Err(Error::Config(format!("unknown grid {other:?}; expected default or extended"))),
        }
    }
}

/// Iteration budgets; the `search_*` ones apply while scanning weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub cgls_iters: usize,
    pub cgls_restarts: usize,
    pub cgls_tol: f64,
    pub smooth_iters: usize,
    pub smooth_tol: f64,
    pub search_cgls_restarts: usize,
    pub search_smooth_iters: usize,
    pub lpls_restarts: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            cgls_iters: 200,
            cgls_restarts: 10,
            cgls_tol: 1e-3,
            smooth_iters: 2000,
            smooth_tol: 1e-7,
            search_cgls_restarts: 3,
            search_smooth_iters: 600,
            lpls_restarts: 1,
        }
    }
}

impl Budgets {
    fn cgls(&self, search: bool) -> CglsOptions {
        CglsOptions {
            max_iters: self.cgls_iters,
            max_restarts: if search { self.search_cgls_restarts.min(self.cgls_restarts) } else { self.cgls_restarts },
            tol: self.cgls_tol,
            ..Default::default()
        }
    }

    fn smooth(&self, search: bool) -> SmoothOptions {
        SmoothOptions {
            max_iters: if search { self.search_smooth_iters.min(self.smooth_iters) } else { self.smooth_iters },
            tol: self.smooth_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub phantom: PhantomKind,
    pub method: Method,
    pub eta: f64,
    /// Seed of the measurement noise.
    pub seed: u64,
    /// When set, phantom regions get randomly drawn materials.
    pub material_seed: Option<u64>,
    pub alpha: AlphaChoice,
    pub beta: f64,
    /// Derivative order of the sinogram filter.
    pub m: usize,
    pub grid: GridKind,
    /// Pixels per side of the image grid.
    pub n: usize,
    /// Proportionality of attenuation to density; fitted from the table when absent.
    pub nu: Option<f64>,
    pub tv_delta: f64,
    pub materials: Option<PathBuf>,
    pub budgets: Budgets,
    pub metrics: MetricConfig,
    /// Scanner and sinogram sampling; the image extent is taken from `grid` and `n`.
    pub geometry: GeometryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomKind::Simple,
            method: Method::Jlam,
            eta: 0.1,
            seed: 1,
            material_seed: None,
            alpha: AlphaChoice::Auto,
            beta: 0.01,
            m: 2,
            grid: GridKind::Default,
            n: 200,
            nu: None,
            tv_delta: 0.05,
            materials: None,
            budgets: Budgets::default(),
            metrics: MetricConfig::default(),
            geometry: GeometryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be nonnegative", self.eta));
        }
        if self.n < 4 {
            return bad(format!("n = {} is too small", self.n));
        }
        if self.m == 0 {
            return bad("derivative order m must be at least 1".into());
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta = {} must be positive", self.beta));
        }
        if !(self.tv_delta > 0.0) {
            return bad(format!("tv_delta = {} must be positive", self.tv_delta));
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0 && nu.is_finite()) {
                return bad(format!("nu = {nu} must be positive"));
            }
        }
        self.geometry.scanner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Geometry with the image extent replaced by `grid` at `n` pixels per side.
    pub fn resolved_geometry(&self) -> GeometryConfig {
        let mut g = self.geometry.clone();
        g.set_image_grid(&self.grid.grid(self.n));
        g
    }

    pub fn material_table(&self) -> Result<MaterialTable> {
        match &self.materials {
            Some(p) => MaterialTable::load(p),
            None => Ok(MaterialTable::builtin()),
        }
    }

    pub fn resolve_nu(&self, table: &MaterialTable) -> Result<f64> {
        match self.nu {
            Some(v) => Ok(v),
            None => Ok(fit_nu(table, 20.0)?.nu),
        }
    }
}

/// Phantom, exact data and noisy data, all in units where `max(n_e) = 1`.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Phantom in table units.
    pub truth: PhantomPair,
    /// Multiplier taking table units to solver units.
    pub scale: f64,
    pub ne_true: Image,
    pub mu_true: Image,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub data: NoisyData,
}

pub fn prepare(cfg: &ExperimentConfig, ops: &Operators, table: &MaterialTable) -> Result<Prepared> {
    let mut truth = PhantomPair::builtin(cfg.phantom, &ops.image, table)?;
    if let Some(s) = cfg.material_seed {
        truth = truth.randomize_materials(table, s)?;
    }
    let peak = truth.n_e.max();
    if !(peak > 0.0) {
        return Err(Error::Degenerate("phantom has no electron density".into()));
    }
    let scale = 1.0 / peak;
    let mut scaled = truth.clone();
    scaled.n_e = truth.n_e.scaled(scale);
    scaled.mu = truth.mu.scaled(scale);
    let (b1, b2) = simulate_data(&scaled, ops)?;
    let data = NoisyData::new(&b1, &b2, cfg.eta, cfg.seed)?;
    Ok(Prepared { ne_true: scaled.n_e, mu_true: scaled.mu, truth, scale, b1, b2, data })
}

/// One method's output, scored against the phantom.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub method: Method,
    /// Weights used, keyed by what they regularized.
    pub alphas: Vec<(String, f64)>,
    /// Reconstruction in table units.
    pub recon: Reconstruction,
    pub metrics: MetricReport,
    pub searches: Vec<(String, LadderSearch)>,
}

impl MethodOutcome {
    pub fn converged(&self) -> bool {
        self.recon.converged()
    }
}

/// Centre of the TV weight ladder: noise-sized data gradient per pixel over
/// the TV gradient of a unit jump.
fn tv_center(a: &dyn LinearMap, b: &[f64], eta: f64, grid: &ImageGrid) -> Result<f64> {
    let atb = a.apply_adjoint(b)?;
    let per_pixel = norm2(&atb) / (atb.len() as f64).sqrt();
    let edge = grid.dx1().min(grid.dx2());
    Ok((eta.max(0.01) * per_pixel / edge).max(f64::MIN_POSITIVE))
}

/// Everything needed to run methods on one prepared experiment.
pub struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub sys: JointSystem<'a>,
    pub prep: &'a Prepared,
}

const DECADES: usize = 4;
const PER_DECADE: usize = 10;

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, ops: &'a Operators, prep: &'a Prepared, nu: f64) -> Result<Self> {
        Ok(Self { cfg, sys: JointSystem::new(ops, nu, 0.0)?, prep })
    }

    fn ops(&self) -> &Operators {
        self.sys.ops
    }

    fn score(&self, rec: &Reconstruction) -> Result<MetricReport> {
        MetricReport::evaluate(&self.prep.ne_true, &rec.n_e, &self.prep.mu_true, &rec.mu, &self.cfg.metrics)
    }

    fn jlam(&self, alpha: f64, search: bool) -> Result<Reconstruction> {
        let sys = self.sys.clone().with_alpha(alpha)?;
        reconstruct_jlam(&sys, &self.prep.data, &self.cfg.budgets.cgls(search))
    }

    fn tv(&self, alpha_mu: f64, alpha_ne: f64, search: bool) -> Result<Reconstruction> {
        let opts = TvOptions { delta: self.cfg.tv_delta, smooth: self.cfg.budgets.smooth(search) };
        reconstruct_tv_separate(self.ops(), &self.prep.data, alpha_mu, alpha_ne, &opts)
    }

    /// One modality of the TV baseline at the search budget.
    fn tv_single(&self, a: &dyn LinearMap, b: &[f64], alpha: f64) -> Result<Vec<f64>> {
        let tv = HuberTv { grid: self.ops().image, delta: self.cfg.tv_delta };
        Ok(mfista(a, b, Some((&tv, alpha)), None, &self.cfg.budgets.smooth(true))?.x)
    }

    fn joint_smooth(&self, method: Method, alpha: f64, search: bool) -> Result<Reconstruction> {
        let opts = SmoothJointOptions {
            beta: self.cfg.beta,
            smooth: self.cfg.budgets.smooth(search),
            restarts: if search || method == Method::Jtv { 0 } else { self.cfg.budgets.lpls_restarts },
            seed: self.cfg.seed,
        };
        match method {
            Method::Jtv => reconstruct_jtv(&self.sys, &self.prep.data, alpha, &opts),
            _ => reconstruct_lpls(&self.sys, &self.prep.data, alpha, &opts),
        }
    }

    fn joint_center(&self, method: Method) -> Result<f64> {
        match method {
            Method::Jlam => Ok(self.sys.norm_toric / self.sys.norm_filtered),
            _ => {
                let b = self.sys.data_rhs(&self.prep.data)?;
                tv_center(&self.sys.data_map(), &b, self.cfg.eta, &self.ops().image)
            }
        }
    }

    fn solve_joint(&self, method: Method, alpha: f64, search: bool) -> Result<Reconstruction> {
        match method {
            Method::Jlam => self.jlam(alpha, search),
            _ => self.joint_smooth(method, alpha, search),
        }
    }

    /// Runs one method, searching its weights first when configured to.
    pub fn run(&self, method: Method) -> Result<MethodOutcome> {
        let mut searches = Vec::new();
        let (recon, alphas) = match method {
            Method::Tv => {
                let (am, an) = match self.cfg.alpha {
                    AlphaChoice::Value(v) => (v, v),
                    AlphaChoice::Auto => {
                        let ops = self.ops();
                        let cm = tv_center(&ops.radon_limited, &self.prep.data.b1, self.cfg.eta, &ops.image)?;
                        let cn = tv_center(&ops.toric, &self.prep.data.b2, self.cfg.eta, &ops.image)?;
                        let sm = search_ladder(&log_ladder(cm, DECADES, PER_DECADE)?, |a| {
                            let x = self.tv_single(&ops.radon_limited, &self.prep.data.b1, a)?;
                            rel_error(&self.prep.mu_true, &Image::new(ops.image, x)?)
                        })?;
                        let sn = search_ladder(&log_ladder(cn, DECADES, PER_DECADE)?, |a| {
                            let x = self.tv_single(&ops.toric, &self.prep.data.b2, a)?;
                            rel_error(&self.prep.ne_true, &Image::new(ops.image, x)?)
                        })?;
                        let pair = (sm.alpha, sn.alpha);
                        searches.push(("mu".to_string(), sm));
                        searches.push(("n_e".to_string(), sn));
                        pair
                    }
                };
                (self.tv(am, an, false)?, vec![("mu".to_string(), am), ("n_e".to_string(), an)])
            }
            _ => {
                let alpha = match self.cfg.alpha {
                    AlphaChoice::Value(v) => v,
                    AlphaChoice::Auto => {
                        let ladder = log_ladder(self.joint_center(method)?, DECADES, PER_DECADE)?;
                        let s = search_ladder(&ladder, |a| {
                            let r = self.solve_joint(method, a, true)?;
                            let m = self.score(&r)?;
                            Ok(m.eps_ne + m.eps_mu)
                        })?;
                        let a = s.alpha;
                        searches.push(("joint".to_string(), s));
                        a
                    }
                };
                (self.solve_joint(method, alpha, false)?, vec![("joint".to_string(), alpha)])
            }
        };
        let metrics = self.score(&recon)?;
        let inv = 1.0 / self.prep.scale;
        let recon = Reconstruction { mu: recon.mu.scaled(inv), n_e: recon.n_e.scaled(inv), solves: recon.solves };
        Ok(MethodOutcome { method, alphas, recon, metrics, searches })
    }
}
