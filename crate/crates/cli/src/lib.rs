//! Command-line pipeline: simulate data, reconstruct, predict artifacts,
//! reproduce experiment suites and render grids, each run leaving a manifest
//! that `rerun` can replay and verify.

pub mod cache;
pub mod commands;
pub mod manifest;
pub mod render;
pub mod task;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ctjoint::experiment::{AlphaChoice, ExperimentConfig, GridKind, Method};
use ctjoint::phantoms::PhantomKind;

use crate::commands::{execute, Context};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::task::{parse_point, Suite, Task};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ctjoint::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("rerun differs from the manifest: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(ctjoint::Error::Config(_)) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctjoint", version, about = "Joint transmission and Compton scatter tomography")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Print progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ExperimentArgs {
    /// Experiment config (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// simple, complex or bar.
    #[arg(long)]
    pub phantom: Option<String>,
    /// tv, jlam, jtv or lpls.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for random material assignment.
    #[arg(long)]
    pub material_seed: Option<u64>,
    /// "auto" or a fixed weight.
    #[arg(long)]
    pub alpha: Option<String>,
    /// default or extended.
    #[arg(long)]
    pub grid: Option<String>,
    /// Pixels per side.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// Directory for cached operators.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a phantom and write clean and noisy data.
    Simulate(ExperimentArgs),
    /// Reconstruct both images with one method and score them.
    Reconstruct(ExperimentArgs),
    /// Visibility, predicted artifact curves and point backprojections.
    PredictArtifacts {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Location of the point object, as x1,x2.
        #[arg(long, default_value = "0,-1", allow_hyphen_values = true)]
        point: String,
        /// Directions sampled along the predicted curves.
        #[arg(long, default_value_t = 720)]
        samples: usize,
    },
    /// Run a comparison suite: t1, t2, tb1 (simple, complex and bar phantoms) or randomized.
    Reproduce {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        suite: String,
        /// Material draws in the randomized suite.
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
    /// Render a raw grid as an 8-bit image.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Point list drawn on top, one `x1 x2` pair per line; repeatable.
        #[arg(long)]
        overlay: Vec<PathBuf>,
        /// Also write a PNG.
        #[arg(long)]
        png: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Repeat a recorded run into a new directory and check its outputs.
    Rerun {
        /// A manifest file or the directory holding one.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn usage<T>(r: ctjoint::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                usage(ExperimentConfig::from_toml_str(&text))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.phantom {
            cfg.phantom = usage(v.parse::<PhantomKind>())?;
        }
        if let Some(v) = &self.method {
            cfg.method = usage(v.parse::<Method>())?;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.material_seed {
            cfg.material_seed = Some(v);
        }
        if let Some(v) = &self.alpha {
            cfg.alpha = usage(v.parse::<AlphaChoice>())?;
        }
        if let Some(v) = &self.grid {
            cfg.grid = usage(v.parse::<GridKind>())?;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(p) = &cfg.materials {
            cfg.materials = Some(absolute(p)?);
        }
        usage(cfg.validate())?;
        Ok(cfg)
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::fs::canonicalize(p).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", p.display())))
}

/// Outcome of a successful command.
#[derive(Debug)]
pub struct Finished {
    pub manifest: RunManifest,
    pub out: PathBuf,
}

impl Finished {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.converged {
            EXIT_OK
        } else {
            EXIT_NONCONVERGENCE
        }
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        b = b.num_threads(t);
    }
    let pool = b.build().map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn run_task(task: Task, cfg: ExperimentConfig, out: &Path, run: &RunArgs, verbose: bool) -> Result<Finished, CliError> {
    let ctx = Context { cache: run.cache.as_deref(), verbose };
    let manifest = in_pool(run.threads, || execute(&task, &cfg, out, &ctx))??;
    Ok(Finished { manifest, out: out.to_path_buf() })
}

fn rerun(manifest: &Path, out: &Path, cache: Option<PathBuf>, verbose: bool) -> Result<Finished, CliError> {
    let file = if manifest.is_dir() { manifest.join(MANIFEST_FILE) } else { manifest.to_path_buf() };
    let old = RunManifest::load(&file)?;
    let run = RunArgs { cache, threads: Some(old.threads) };
    let done = run_task(old.task.clone(), old.config.clone(), out, &run, verbose)?;
    let mut problems = Vec::new();
    for e in &old.outputs {
        match done.manifest.outputs.iter().find(|n| n.path == e.path) {
            None => problems.push(format!("{} was not produced", e.path)),
            Some(n) if n.sha256 != e.sha256 => problems.push(format!("{} changed", e.path)),
            _ => {}
        }
    }
    for n in &done.manifest.outputs {
        if !old.outputs.iter().any(|e| e.path == n.path) {
            problems.push(format!("{} is new", n.path));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Mismatch(problems.join("; ")));
    }
    Ok(done)
}

pub fn run(cli: Cli) -> Result<Finished, CliError> {
    let v = cli.verbose;
    match cli.command {
        Command::Simulate(a) => run_task(Task::Simulate, a.resolve()?, &a.out, &a.run, v),
        Command::Reconstruct(a) => run_task(Task::Reconstruct, a.resolve()?, &a.out, &a.run, v),
        Command::PredictArtifacts { exp, point, samples } => {
            let task = Task::PredictArtifacts { point: parse_point(&point)?, curve_samples: samples };
            run_task(task, exp.resolve()?, &exp.out, &exp.run, v)
        }
        Command::Reproduce { exp, suite, runs } => {
            let task = Task::Reproduce { suite: suite.parse::<Suite>()?, runs };
            run_task(task, exp.resolve()?, &exp.out, &exp.run, v)
        }
        Command::Render { input, overlay, png, out, threads } => {
            let task = Task::Render {
                input: absolute(&input)?,
                overlays: overlay.iter().map(|p| absolute(p)).collect::<Result<_, _>>()?,
                png,
            };
            run_task(task, ExperimentConfig::default(), &out, &RunArgs { cache: None, threads }, v)
        }
        Command::Rerun { manifest, out, cache } => rerun(&manifest, &out, cache, v),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(done) => {
            let code = done.exit_code();
            println!("wrote {} files to {}", done.manifest.outputs.len(), done.out.display());
            if code == EXIT_NONCONVERGENCE {
                eprintln!("warning: a solver stopped at its iteration budget; outputs were still written");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> ExperimentArgs {
        let mut v = vec!["ctjoint", "simulate", "--out", "x"];
        v.extend_from_slice(extra);
        match Cli::try_parse_from(v).unwrap().command {
            Command::Simulate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_defaults() {
        let cfg = args(&["--phantom", "bar", "--method", "lpls", "--eta", "0.05", "--alpha", "2.5", "--n", "64"])
            .resolve()
            .unwrap();
        assert_eq!(cfg.phantom, PhantomKind::Bar);
        assert_eq!(cfg.method, Method::Lpls);
        assert_eq!(cfg.eta, 0.05);
        assert_eq!(cfg.alpha, AlphaChoice::Value(2.5));
        assert_eq!(cfg.n, 64);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        for extra in [["--method", "art"], ["--phantom", "cube"], ["--alpha", "x"], ["--grid", "huge"]] {
            let e = args(&extra).resolve().unwrap_err();
            assert_eq!(e.exit_code(), EXIT_USAGE, "{extra:?}");
        }
        assert_eq!(args(&["--eta=-1"]).resolve().unwrap_err().exit_code(), EXIT_USAGE);
        assert_eq!(main_with_args(["ctjoint", "reconstruct"]), EXIT_USAGE);
    }

    #[test]
    fn nonconvergence_maps_to_exit_three() {
        let mut m = RunManifest::new(Task::Simulate, ExperimentConfig::default());
        m.converged = false;
        assert_eq!(Finished { manifest: m, out: PathBuf::new() }.exit_code(), EXIT_NONCONVERGENCE);
    }
}
