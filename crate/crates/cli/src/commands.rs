use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ctjoint::artifacts::{delta_image, mass_fraction, BranchOperators};
use ctjoint::experiment::{prepare, AlphaChoice, ExperimentConfig, Method, MethodOutcome, Prepared, Runner};
use ctjoint::geometry::{Image, Vec2};
use ctjoint::io::{read_points, write_metric_stats, write_metric_table, write_points, write_trace, RawGrid};
use ctjoint::metrics::{batch_stats, MetricReport};
use ctjoint::microlocal::{artifact_support_sets, coverage_at, predicted_artifact_points, visibility_map};
use ctjoint::operators::norm2;
use ctjoint::phantoms::MaterialTable;
use ctjoint::solvers::Operators;
use rayon::prelude::*;

use crate::cache::load_operators;
use crate::manifest::{OutputDir, RunManifest};
use crate::render;
use crate::task::{Suite, Task};
use crate::CliError;

/// Dilation, in pixels, used when scoring artifact mass against the predicted support.
const SUPPORT_DILATION: usize = 2;

pub struct Context<'a> {
    pub cache: Option<&'a Path>,
    pub verbose: bool,
}

impl Context<'_> {
    fn note(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }
}

fn timed<T>(man: &mut RunManifest, phase: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let t = Instant::now();
    let out = f()?;
    *man.timing.entry(phase.to_string()).or_default() += t.elapsed().as_secs_f64();
    Ok(out)
}

fn csv_float(v: f64) -> String {
    format!("{v:?}")
}

/// Runs `task`, writing its outputs and manifest into `out`.
pub fn execute(task: &Task, cfg: &ExperimentConfig, out: &Path, ctx: &Context) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let mut man = RunManifest::new(task.clone(), cfg.clone());
    let mut dir = OutputDir::create(out)?;
    let t = Instant::now();
    match task {
        Task::Simulate => simulate(cfg, &mut dir, &mut man, ctx)?,
        Task::Reconstruct => reconstruct(cfg, &mut dir, &mut man, ctx)?,
        Task::PredictArtifacts { point, curve_samples } => {
            predict_artifacts(cfg, *point, *curve_samples, &mut dir, &mut man, ctx)?
        }
        Task::Reproduce { suite, runs } => reproduce(cfg, *suite, *runs, &mut dir, &mut man, ctx)?,
        Task::Render { input, overlays, png } => render_grid(input, overlays, *png, &mut dir, &mut man)?,
    }
    man.timing.insert("total".to_string(), t.elapsed().as_secs_f64());
    man.outputs = dir.entries;
    man.write(out)?;
    Ok(man)
}

fn operators(cfg: &ExperimentConfig, man: &mut RunManifest, ctx: &Context) -> Result<Operators, CliError> {
    let geom = cfg.resolved_geometry();
    let loaded = timed(man, "operators", || load_operators(&geom, cfg.m, ctx.cache))?;
    ctx.note(&format!(
        "operators ready ({}x{} image, {} cached)",
        loaded.ops.image.n1, loaded.ops.image.n2, loaded.cache_hits
    ));
    man.operators = loaded.digests;
    Ok(loaded.ops)
}

fn line_raw(ops: &Operators, values: &[f64]) -> Result<RawGrid, CliError> {
    Ok(RawGrid::from_line_sinogram(&ops.lines, &ops.radon_limited.row_labels, values)?)
}

fn scaled(v: &[f64], k: f64) -> Vec<f64> {
    v.iter().map(|x| x * k).collect()
}

fn simulate(cfg: &ExperimentConfig, dir: &mut OutputDir, man: &mut RunManifest, ctx: &Context) -> Result<(), CliError> {
    let ops = operators(cfg, man, ctx)?;
    let table = cfg.material_table()?;
    let prep = timed(man, "simulate", || Ok(prepare(cfg, &ops, &table)?))?;
    // data are written in the units of the material table
    let inv = 1.0 / prep.scale;
    let sets = [
        ("b1", scaled(&prep.b1, inv), false),
        ("b1_noisy", scaled(&prep.data.b1, inv), false),
        ("b2", scaled(&prep.b2, inv), true),
        ("b2_noisy", scaled(&prep.data.b2, inv), true),
    ];
    dir.add("phantom_n_e.raw", |p| RawGrid::from_image(&prep.truth.n_e).write(p))?;
    dir.add("phantom_mu.raw", |p| RawGrid::from_image(&prep.truth.mu).write(p))?;
    let mut summary = String::from("name,len,sum,norm\n");
    for (name, v, toric) in &sets {
        let raw = if *toric { RawGrid::from_toric_sinogram(&ops.torics, v)? } else { line_raw(&ops, v)? };
        dir.add(&format!("{name}.raw"), |p| raw.write(p))?;
        let sum: f64 = v.iter().sum();
        writeln!(summary, "{name},{},{},{}", v.len(), csv_float(sum), csv_float(norm2(v))).unwrap();
    }
    dir.add_bytes("data_summary.csv", summary.as_bytes())?;
    let stacked = |a: &[f64], b: &[f64]| a.iter().chain(b).copied().collect::<Vec<f64>>();
    let clean = stacked(&prep.b1, &prep.b2);
    let noisy = stacked(&prep.data.b1, &prep.data.b2);
    let diff: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
    man.resolve("scale", prep.scale);
    man.resolve("noise_seed", cfg.seed);
    man.resolve("material_seed", cfg.material_seed);
    man.resolve("realized_noise_level", norm2(&diff) / norm2(&clean));
    Ok(())
}

fn write_outcome(dir: &mut OutputDir, prefix: &str, o: &MethodOutcome) -> Result<(), CliError> {
    dir.add(&format!("{prefix}mu.raw"), |p| RawGrid::from_image(&o.recon.mu).write(p))?;
    dir.add(&format!("{prefix}n_e.raw"), |p| RawGrid::from_image(&o.recon.n_e).write(p))?;
    for (label, rep) in &o.recon.solves {
        dir.add(&format!("{prefix}trace_{label}.csv"), |p| write_trace(p, &rep.trace))?;
    }
    if !o.searches.is_empty() {
        let mut s = String::from("search,index,alpha,score\n");
        for (label, search) in &o.searches {
            for (k, score) in &search.scores {
                writeln!(s, "{label},{k},{},{}", csv_float(search.ladder[*k]), csv_float(*score)).unwrap();
            }
        }
        dir.add_bytes(&format!("{prefix}alpha_search.csv"), s.as_bytes())?;
    }
    Ok(())
}

fn alpha_map(o: &MethodOutcome) -> BTreeMap<String, f64> {
    o.alphas.iter().cloned().collect()
}

fn reconstruct(cfg: &ExperimentConfig, dir: &mut OutputDir, man: &mut RunManifest, ctx: &Context) -> Result<(), CliError> {
    let ops = operators(cfg, man, ctx)?;
    let table = cfg.material_table()?;
    let prep = prepare(cfg, &ops, &table)?;
    let nu = cfg.resolve_nu(&table)?;
    let runner = timed(man, "norms", || Ok(Runner::new(cfg, &ops, &prep, nu)?))?;
    record_system(man, &runner, &prep);
    ctx.note(&format!("running {}", cfg.method.label()));
    let outcome = timed(man, "solve", || Ok(runner.run(cfg.method)?))?;
    write_outcome(dir, "", &outcome)?;
    dir.add("metrics.csv", |p| write_metric_table(p, &[(cfg.method.label().to_string(), outcome.metrics)]))?;
    man.resolve("alpha", alpha_map(&outcome));
    man.resolve("iterations", outcome.recon.iterations());
    man.converged = outcome.converged();
    Ok(())
}

fn record_system(man: &mut RunManifest, runner: &Runner, prep: &Prepared) {
    man.resolve("nu", runner.sys.nu);
    man.resolve("w", runner.sys.w);
    man.resolve("norm_toric", runner.sys.norm_toric);
    man.resolve("norm_radon_limited", runner.sys.norm_radon_limited);
    man.resolve("norm_filtered_radon", runner.sys.norm_filtered);
    man.resolve("scale", prep.scale);
    man.resolve("noise_seed", runner.cfg.seed);
    man.resolve("material_seed", runner.cfg.material_seed);
}

fn predict_artifacts(
    cfg: &ExperimentConfig,
    point: Vec2,
    samples: usize,
    dir: &mut OutputDir,
    man: &mut RunManifest,
    ctx: &Context,
) -> Result<(), CliError> {
    let geom = cfg.resolved_geometry();
    let sc = geom.scanner()?;
    let grid = geom.image_grid()?;
    let torics = geom.toric_grid()?;
    let delta = delta_image(&grid, point)?;

    let vis = timed(man, "visibility", || Ok(visibility_map(&grid, &sc)))?;
    dir.add("visibility.raw", |p| RawGrid::from_image(&Image::new(grid, vis.clone())?).write(p))?;
    let support = timed(man, "support", || Ok(artifact_support_sets(point, &grid, &sc)))?;
    let mask: Vec<f64> = support.iter().map(|&b| f64::from(u8::from(b))).collect();
    dir.add("support.raw", |p| RawGrid::from_image(&Image::new(grid, mask)?).write(p))?;
    let curves = predicted_artifact_points(point, &sc, samples);
    dir.add("lambda12.txt", |p| write_points(p, &curves.lambda12))?;
    dir.add("lambda21.txt", |p| write_points(p, &curves.lambda21))?;

    ctx.note("assembling branch operators");
    let branches = timed(man, "operators", || Ok(BranchOperators::assemble(&grid, &torics, &sc)?))?;
    let mut rows: Vec<(String, f64)> = vec![
        ("point_x1".into(), point[0]),
        ("point_x2".into(), point[1]),
        ("coverage_at_point".into(), coverage_at(point, &sc)),
        ("full_coverage_fraction".into(), vis.iter().filter(|&&v| v >= 1.0).count() as f64 / vis.len() as f64),
        ("support_pixels".into(), support.iter().filter(|&&b| b).count() as f64),
        ("lambda12_points".into(), curves.lambda12.len() as f64),
        ("lambda21_points".into(), curves.lambda21.len() as f64),
        ("lambda_points_in_grid".into(), curves.all().filter(|p| grid.contains(**p)).count() as f64),
    ];
    for (filtered, suffix) in [(false, ""), (true, "_phi")] {
        let bp = timed(man, "backprojection", || Ok(branches.backproject(&delta, filtered)?))?;
        dir.add(&format!("tt{suffix}.raw"), |p| RawGrid::from_image(&bp.full).write(p))?;
        dir.add(&format!("diagonal{suffix}.raw"), |p| RawGrid::from_image(&bp.diagonal).write(p))?;
        dir.add(&format!("cross{suffix}.raw"), |p| RawGrid::from_image(&bp.cross).write(p))?;
        let frac = if support.iter().any(|&b| b) { mass_fraction(&bp.cross, &support, SUPPORT_DILATION).ok() } else { None };
        rows.push((format!("cross{suffix}_mass_near_support"), frac.unwrap_or(f64::NAN)));
    }
    let mut s = String::from("quantity,value\n");
    for (k, v) in &rows {
        writeln!(s, "{k},{}", csv_float(*v)).unwrap();
    }
    dir.add_bytes("artifacts.csv", s.as_bytes())?;
    man.resolve("toric_filter", "d2/dr2");
    man.resolve("support_dilation", SUPPORT_DILATION);
    Ok(())
}

fn reproduce(
    cfg: &ExperimentConfig,
    suite: Suite,
    runs: usize,
    dir: &mut OutputDir,
    man: &mut RunManifest,
    ctx: &Context,
) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if let Some(p) = suite.phantom() {
        cfg.phantom = p;
        cfg.material_seed = None;
    }
    man.resolve("phantom", cfg.phantom.name());
    let ops = operators(&cfg, man, ctx)?;
    let table = cfg.material_table()?;
    let nu = cfg.resolve_nu(&table)?;
    match suite {
        Suite::Randomized => randomized(&cfg, &ops, &table, nu, runs, dir, man, ctx),
        _ => {
            let prep = prepare(&cfg, &ops, &table)?;
            let runner = Runner::new(&cfg, &ops, &prep, nu)?;
            record_system(man, &runner, &prep);
            let mut columns = Vec::new();
            let mut alphas = String::from("method,target,alpha\n");
            let mut converged = true;
            for method in Method::ALL {
                ctx.note(&format!("{suite}: running {}", method.label()));
                let o = timed(man, method.name(), || Ok(runner.run(method)?))?;
                write_outcome(dir, &format!("{}_", method.name()), &o)?;
                for (k, a) in &o.alphas {
                    writeln!(alphas, "{},{k},{}", method.label(), csv_float(*a)).unwrap();
                }
                man.resolve(format!("alpha_{}", method.name()), alpha_map(&o));
                converged &= o.converged();
                columns.push((method.label().to_string(), o.metrics));
            }
            dir.add("metrics.csv", |p| write_metric_table(p, &columns))?;
            dir.add_bytes("alphas.csv", alphas.as_bytes())?;
            man.converged = converged;
            Ok(())
        }
    }
}

/// Methods compared over random material draws.
pub const RANDOMIZED_METHODS: [Method; 3] = [Method::Jlam, Method::Jtv, Method::Lpls];

#[allow(clippy::too_many_arguments)]
fn randomized(
    cfg: &ExperimentConfig,
    ops: &Operators,
    table: &MaterialTable,
    nu: f64,
    runs: usize,
    dir: &mut OutputDir,
    man: &mut RunManifest,
    ctx: &Context,
) -> Result<(), CliError> {
    if runs < 2 {
        return Err(CliError::Usage("randomized suite needs at least 2 runs".into()));
    }
    let base = cfg.material_seed.unwrap_or(cfg.seed);
    let draw = |r: usize| ExperimentConfig {
        material_seed: Some(base.wrapping_add(r as u64)),
        seed: cfg.seed.wrapping_add(r as u64),
        ..cfg.clone()
    };

    // weights are chosen on the first draw and kept for the rest
    let first = draw(0);
    let prep = prepare(&first, ops, table)?;
    let runner = Runner::new(&first, ops, &prep, nu)?;
    record_system(man, &runner, &prep);
    let mut fixed = Vec::new();
    for method in RANDOMIZED_METHODS {
        ctx.note(&format!("randomized: choosing weight for {}", method.label()));
        let o = timed(man, "alpha_search", || Ok(runner.run(method)?))?;
        let alpha = o.alphas[0].1;
        man.resolve(format!("alpha_{}", method.name()), alpha);
        fixed.push((method, alpha, o));
    }

    ctx.note(&format!("randomized: {runs} draws"));
    let rest: Vec<Vec<MethodOutcome>> = timed(man, "draws", || {
        (1..runs)
            .into_par_iter()
            .map(|r| -> Result<Vec<MethodOutcome>, CliError> {
                let c = draw(r);
                let prep = prepare(&c, ops, table)?;
                fixed
                    .iter()
                    .map(|(method, alpha, _)| {
                        let cm = ExperimentConfig { alpha: AlphaChoice::Value(*alpha), ..c.clone() };
                        let runner = Runner::new(&cm, ops, &prep, nu)?;
                        Ok(runner.run(*method)?)
                    })
                    .collect()
            })
            .collect()
    })?;

    let mut per_run = String::from("run,material_seed,method");
    for f in MetricReport::FIELDS {
        write!(per_run, ",{f}").unwrap();
    }
    per_run.push('\n');
    let mut by_method: Vec<Vec<MetricReport>> = vec![Vec::new(); RANDOMIZED_METHODS.len()];
    let mut converged = true;
    let all = std::iter::once(fixed.iter().map(|f| f.2.clone()).collect::<Vec<_>>()).chain(rest);
    for (r, outs) in all.enumerate() {
        for (k, o) in outs.iter().enumerate() {
            write!(per_run, "{r},{},{}", base.wrapping_add(r as u64), o.method.label()).unwrap();
            for v in o.metrics.values() {
                write!(per_run, ",{}", csv_float(v)).unwrap();
            }
            per_run.push('\n');
            converged &= o.converged();
            by_method[k].push(o.metrics);
        }
    }
    let stats = RANDOMIZED_METHODS
        .iter()
        .zip(&by_method)
        .map(|(m, reps)| {
            let (mean, std) = batch_stats(reps)?;
            Ok((m.label().to_string(), mean, std))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    dir.add_bytes("metrics_runs.csv", per_run.as_bytes())?;
    dir.add("metrics_stats.csv", |p| write_metric_stats(p, &stats))?;
    man.resolve("runs", runs);
    man.converged = converged;
    Ok(())
}

fn render_grid(
    input: &Path,
    overlays: &[std::path::PathBuf],
    png: bool,
    dir: &mut OutputDir,
    man: &mut RunManifest,
) -> Result<(), CliError> {
    let g = RawGrid::read(input)?;
    let (lo, hi) = render::window(&g);
    let grey = render::grey_levels(&g, lo, hi);
    let mut points = Vec::new();
    for o in overlays {
        points.extend(read_points(o)?);
    }
    let color = !overlays.is_empty();
    let pixels = if color { render::overlay(&g, &grey, &points) } else { grey };
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
    let ext = if color { "ppm" } else { "pgm" };
    let name = format!("{stem}.{ext}");
    render::write_pnm(&dir.path(&name), g.n1, g.n2, &pixels, color)?;
    dir.add(&name, |_| Ok(()))?;
    if png {
        let name = format!("{stem}.png");
        render::write_png(&dir.path(&name), g.n1, g.n2, &pixels, color)?;
        dir.add(&name, |_| Ok(()))?;
    }
    let window = format!("min,max\n{},{}\n", csv_float(lo), csv_float(hi));
    dir.add_bytes("window.csv", window.as_bytes())?;
    man.resolve("window", [lo, hi]);
    man.resolve("overlay_points", points.len());
    Ok(())
}
