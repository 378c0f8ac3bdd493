//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p basisfit --test acceptance` runs everything; trailing numeric arguments
//! (`-- 1 4 11`) select a subset.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use basisfit::optimize::{self, DenseResiduals, OptimizerConfig, SecondOrderConfig};
use basisfit::problems::laplace::{self, in_domain_grid, oracle_laplace_harmonic};
use basisfit::problems::sphere::{self, meridian, SphereOracle};
use basisfit::problems::spacetime::{dots, HEAT_TARGET_ANGLES};
use basisfit::problems::stiff::{self, Stiff1d};
use basisfit::problems::{self, error_metrics, mass_integral, metrics, ssa, ProblemId, ProblemParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

// Tolerances
const C1_LINF: f64 = 1e-6;
const C2_RATIO: f64 = 1e-2;
const C3_L2: f64 = 0.05;
const C3_LINF: f64 = 0.15;
const C4_L2: f64 = 0.05;
const C5_L2: f64 = 0.05;
const C6_MAX_DEV: f64 = 0.05;
const C7_MASS_VARIATION: f64 = 0.10;
const C8_PHI_L2: f64 = 0.01;
const C9_PDE_RMS: f64 = 1e-2;
const C9_TARGET_FRACTION: f64 = 0.05;
const C10_REL: f64 = 1e-5;
const C11_ROSENBROCK: f64 = 1e-12;
const C11_LINEAR: f64 = 1e-10;
const C11_PROBLEMS: usize = 1000;

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("basisfit-cache")
}

fn params() -> ProblemParams {
    ProblemParams { cache_dir: Some(cache_dir()), ..Default::default() }
}

fn harmonic_laplace() -> Outcome {
    let mut p = params().with_modes(8);
    p.harmonic_boundary = true;
    let built = problems::build(ProblemId::LaplacePeanut, &p)?;
    let (compiled, report) = problems::solve(&built)?;
    let grid = in_domain_grid(&built.domain, 100);
    let u = compiled.evaluate_field(&report.x, 0, &grid)?;
    let exact: Vec<f64> = grid.iter().map(|q| oracle_laplace_harmonic(q)).collect();
    let (_, linf) = error_metrics(&u, &exact)?;
    Ok((linf < C1_LINF, format!("Linf = {linf:.3e} (< {C1_LINF:e})")))
}

fn laplace_sweep() -> Outcome {
    let reference = laplace::self_reference(&params())?.reference.expect("reference field");
    let grid = in_domain_grid(&laplace::peanut_domain(), 100);
    let truth = reference.evaluate(&grid)?;
    let mut errs = Vec::new();
    for n in [10, 20, 30, 40] {
        let built = problems::build(ProblemId::LaplacePeanut, &params().with_modes(n))?;
        let (compiled, report) = problems::solve(&built)?;
        let u = compiled.evaluate_field(&report.x, 0, &grid)?;
        errs.push(error_metrics(&u, &truth)?.0);
    }
    let ratio = errs[3] / errs[0];
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let detail = format!(
        "L2 = [{}], L2(40)/L2(10) = {ratio:.3e} (< {C2_RATIO:e}), monotone = {monotone}",
        errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
    );
    Ok((ratio < C2_RATIO && monotone, detail))
}

fn data_assimilation() -> Outcome {
    let p = params().with_modes(30).with_points("data", 400);
    let built = problems::build(ProblemId::LaplaceDataAssim, &p)?;
    let reference = laplace::self_reference(&p)?.reference.expect("reference field");
    let (compiled, report) = problems::solve(&built)?;
    let grid = in_domain_grid(&built.domain, 100);
    let u = compiled.evaluate_field(&report.x, 0, &grid)?;
    let (l2, linf) = error_metrics(&u, &reference.evaluate(&grid)?)?;
    Ok((
        l2 < C3_L2 && linf < C3_LINF,
        format!("L2 = {l2:.3e} (< {C3_L2}), Linf = {linf:.3e} (< {C3_LINF})"),
    ))
}

fn allen_cahn() -> Outcome {
    let mut p = params();
    p.t_end = Some(0.25);
    p.field_modes.insert("u".into(), vec![65, 9]);
    let built = problems::build(ProblemId::AllenCahn, &p)?;
    let (compiled, report) = problems::solve(&built)?;
    let oracle = stiff::oracle_cached(Stiff1d::AllenCahn, 256, &stiff::time_grid(0.25, 64), Some(&cache_dir()))?;
    let (l2, _) = stiff::compare(Stiff1d::AllenCahn, &compiled.unpack(&report.x)?, &oracle)?;
    Ok((l2 < C4_L2, format!("L2 = {l2:.3e} (< {C4_L2}), {} iterations", report.iterations)))
}

fn nls() -> Outcome {
    let built = problems::build(ProblemId::Nls, &params().with_modes(30))?;
    let (compiled, report) = problems::solve(&built)?;
    let oracle = stiff::oracle_cached(Stiff1d::Nls, 256, &stiff::time_grid(PI / 2.0, 64), Some(&cache_dir()))?;
    let (l2, _) = stiff::compare(Stiff1d::Nls, &compiled.unpack(&report.x)?, &oracle)?;
    Ok((l2 < C5_L2, format!("L2 of |g| = {l2:.3e} (< {C5_L2}), {} iterations", report.iterations)))
}

fn sphere_diffusion() -> Outcome {
    let built = problems::build(ProblemId::SphereDiffusion, &params())?;
    let d = built.scales["diffusivity"];
    let (compiled, report) = problems::solve(&built)?;
    let oracle = SphereOracle::new(sphere::ORACLE_LMAX, sphere::initial_condition)?;
    let line = meridian(200);
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for t in [0.1, 0.5, 1.0] {
        let pts: Vec<Vec<f64>> = line.iter().map(|q| vec![q[0], q[1], q[2], t]).collect();
        let model = compiled.evaluate_field(&report.x, 0, &pts)?;
        let dev = line
            .iter()
            .zip(&model)
            .map(|(q, m)| (m - oracle.evaluate(q, d, t)).abs())
            .fold(0.0_f64, f64::max);
        parts.push(format!("t={t}: {dev:.3e}"));
        worst = worst.max(dev);
    }
    Ok((worst < C6_MAX_DEV, format!("max deviation {} (< {C6_MAX_DEV})", parts.join(", "))))
}

fn transport_mass() -> Outcome {
    let mut p = params().with_modes(10);
    p.n_targets = Some(3);
    let built = problems::build(ProblemId::Transport, &p)?;
    let (compiled, report) = problems::solve(&built)?;
    let c = compiled.unpack(&report.x)?.remove(0);
    let masses: Vec<f64> = (0..200)
        .map(|k| mass_integral(&c, [0.0, 0.0], 1.0, 2.0 * k as f64 / 199.0, 20_000, 11))
        .collect::<Result<_, _>>()?;
    let (lo, hi) = masses.iter().fold((f64::MAX, f64::MIN), |(a, b), &m| (a.min(m), b.max(m)));
    let mean = masses.iter().sum::<f64>() / masses.len() as f64;
    let variation = (hi - lo) / mean;
    Ok((
        variation < C7_MASS_VARIATION,
        format!("mass in [{lo:.4}, {hi:.4}], variation {variation:.3e} (< {C7_MASS_VARIATION})"),
    ))
}

fn ssa_inversion() -> Outcome {
    let built = problems::build(ProblemId::SsaSynthetic, &params())?;
    let (compiled, report) = problems::solve(&built)?;
    let mu = compiled.unpack(&report.x)?.remove(0);
    let rms = ssa::log_viscosity_rms(&mu)?;
    Ok((rms < C8_PHI_L2, format!("log-viscosity L2 = {rms:.3e} (< {C8_PHI_L2}), {} iterations", report.iterations)))
}

fn heat_control() -> Outcome {
    let built = problems::build(ProblemId::HeatControl, &params())?;
    let (compiled, report) = problems::solve(&built)?;
    let losses = compiled.term_losses(&report.x)?;
    let pde_rms = losses[0].sqrt();
    let grid: Vec<Vec<f64>> = metrics::grid_2d((-1.0, 1.0), (-1.0, 1.0), 100, 100)
        .into_iter()
        .filter(|q| q[0].hypot(q[1]) <= 1.0)
        .map(|q| vec![q[0], q[1], 2.0])
        .collect();
    let target: Vec<f64> = grid.iter().map(|q| dots(q, HEAT_TARGET_ANGLES)).collect();
    let u = compiled.evaluate_field(&report.x, 0, &grid)?;
    let (mismatch, _) = error_metrics(&u, &target)?;
    let amplitude = target.iter().cloned().fold(0.0, f64::max);
    let frac = mismatch / amplitude;
    Ok((
        pde_rms < C9_PDE_RMS && frac < C9_TARGET_FRACTION,
        format!("PDE RMS = {pde_rms:.3e} (< {C9_PDE_RMS:e}), target mismatch / max = {frac:.3e} (< {C9_TARGET_FRACTION})"),
    ))
}

fn differentiation() -> Outcome {
    let mut worst_j = 0.0_f64;
    let mut worst_g = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for id in ProblemId::ALL {
        let mut p = params().with_modes(4);
        for set in ["pde", "boundary", "initial", "data", "front"] {
            p = p.with_points(set, 12);
        }
        p.reference_modes = Some(5);
        p.n_targets = Some(3);
        let compiled = problems::build(id, &p)?.compile()?;
        let w: Vec<f64> = (0..compiled.n_terms()).map(|_| rng.gen_range(0.5..2.0)).collect();
        for _ in 0..3 {
            let x: Vec<f64> = (0..compiled.n_coeffs()).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let jac = compiled.jacobian(&x, &w)?;
            let r = compiled.residual_vector(&x, &w)?;
            let h = 1e-6;
            let mut diff = 0.0;
            let mut norm = 0.0;
            let mut gdiff = 0.0;
            let mut gnorm = 0.0;
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let rp = compiled.residual_vector(&xp, &w)?;
                let rm = compiled.residual_vector(&xm, &w)?;
                for i in 0..r.len() {
                    let fd = (rp[i] - rm[i]) / (2.0 * h);
                    diff += (fd - jac[[i, j]]).powi(2);
                    norm += jac[[i, j]].powi(2);
                }
                let lp = compiled.total_loss(&xp, &w)?.total;
                let lm = compiled.total_loss(&xm, &w)?.total;
                let g_fd = (lp - lm) / (2.0 * h);
                let g: f64 = 2.0 * (0..r.len()).map(|i| jac[[i, j]] * r[i]).sum::<f64>();
                gdiff += (g - g_fd).powi(2);
                gnorm += g * g;
            }
            worst_j = worst_j.max((diff / norm).sqrt());
            worst_g = worst_g.max((gdiff / gnorm).sqrt());
        }
    }
    Ok((
        worst_j < C10_REL && worst_g < C10_REL,
        format!("max relative Jacobian error {worst_j:.3e}, gradient error {worst_g:.3e} (< {C10_REL:e})"),
    ))
}

fn second_order_methods() -> [OptimizerConfig; 2] {
    [
        OptimizerConfig::Dogleg(SecondOrderConfig::dogleg()),
        OptimizerConfig::LevenbergMarquardt(SecondOrderConfig::levenberg_marquardt()),
    ]
}

fn optimizer_suite() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let rosen = DenseResiduals {
        n: 2,
        residual: |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]],
        jacobian: |x: &[f64]| Array2::from_shape_vec((2, 2), vec![-20.0 * x[0], 10.0, -1.0, 0.0]).unwrap(),
        affine: false,
    };
    for cfg in second_order_methods() {
        let rep = optimize::run(&rosen, &[-1.2, 1.0], &cfg, &mut |_| {})?;
        let loss = rep.final_loss();
        ok &= loss < C11_ROSENBROCK;
        notes.push(format!("rosenbrock {} loss {loss:.1e}", cfg.name()));
    }

    // y = A x + noise, solved directly through the normal equations
    let a = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 1) as f64).powi(j as i32) / (1.0 + j as f64));
    let y = [0.3, -1.1, 2.0, 0.7, 4.2, -0.5];
    let ata = a.t().dot(&a);
    let aty: Vec<f64> = (0..3).map(|j| (0..6).map(|i| a[[i, j]] * y[i]).sum()).collect();
    let exact = optimize::linalg::solve_spd(&ata, &aty)?;
    let lin = DenseResiduals {
        n: 3,
        residual: |x: &[f64]| (0..6).map(|i| (0..3).map(|j| a[[i, j]] * x[j]).sum::<f64>() - y[i]).collect(),
        jacobian: |_: &[f64]| a.clone(),
        affine: true,
    };
    let mut cfg = SecondOrderConfig::dogleg();
    cfg.max_iters = 1;
    cfg.initial = 1e6;
    let rep = optimize::run(&lin, &[0.0; 3], &OptimizerConfig::Dogleg(cfg), &mut |_| {})?;
    let err = rep.x.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ok &= err < C11_LINEAR;
    notes.push(format!("one-step linear LS error {err:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut violations = 0;
    for k in 0..C11_PROBLEMS {
        let n = rng.gen_range(1..=4);
        let m = n + rng.gen_range(0..=4);
        let a: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prob = DenseResiduals {
            n,
            residual: |x: &[f64]| {
                (0..m)
                    .map(|i| {
                        let s: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
                        s + c[i] * s.sin() - b[i]
                    })
                    .collect()
            },
            jacobian: |x: &[f64]| {
                Array2::from_shape_fn((m, n), |(i, j)| {
                    let s: f64 = (0..n).map(|l| a[i * n + l] * x[l]).sum();
                    a[i * n + j] * (1.0 + c[i] * s.cos())
                })
            },
            affine: false,
        };
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let cfg = &second_order_methods()[k % 2];
        let mut last = f64::INFINITY;
        let mut bad = false;
        optimize::run(&prob, &x0, cfg, &mut |row| {
            bad |= row.total > last;
            last = row.total;
        })?;
        violations += bad as usize;
    }
    ok &= violations == 0;
    notes.push(format!("{violations} non-monotone runs of {C11_PROBLEMS}"));
    Ok((ok, notes.join("; ")))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "exact-representation Laplace", harmonic_laplace),
        (2, "Laplace convergence sweep", laplace_sweep),
        (3, "Laplace data assimilation", data_assimilation),
        (4, "Allen-Cahn vs oracle", allen_cahn),
        (5, "NLS vs split-step oracle", nls),
        (6, "sphere diffusion vs harmonics", sphere_diffusion),
        (7, "transport mass conservation", transport_mass),
        (8, "SSA viscosity inversion", ssa_inversion),
        (9, "heat control", heat_control),
        (10, "differentiation suite", differentiation),
        (11, "optimizer suite", optimizer_suite),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (k, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{k:>2}] {name}: {detail} ({:.1} s)", start.elapsed().as_secs_f64());
        failures += !pass as usize;
    }
    println!("{failures} failed");
    // BASISFIT_ACCEPTANCE_STRICT=1 turns any FAIL into a nonzero exit
    let strict = std::env::var("BASISFIT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
