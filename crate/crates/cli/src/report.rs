//! Metrics documents and the per-problem references they compare against.

use std::collections::BTreeMap;

use basisfit::geometry::stream_rng;
use basisfit::optimize::RunReport;
use basisfit::problems::laplace::{self, in_domain_grid, oracle_laplace_harmonic};
use basisfit::problems::spacetime::{dots, HEAT_TARGET_ANGLES};
use basisfit::problems::sphere::{self, meridian, SphereOracle};
use basisfit::problems::stiff::{self, Stiff1d};
use basisfit::problems::{self, error_metrics, mass_integral, metrics, ssa, BuiltProblem, ProblemError, ProblemId};
use basisfit::residual::CompiledProblem;
use serde_json::{json, Map, Value};

pub const GRID_SIDE: usize = 100;
pub const ORACLE_RESOLUTION: usize = 256;
pub const ORACLE_TIMES: usize = 64;
pub const MASS_SAMPLES: usize = 50;
pub const MASS_MC: usize = 20_000;
pub const SWEEP_POINTS: usize = 2_000;

fn t_end(built: &BuiltProblem) -> f64 {
    built.domain.time.map_or(1.0, |[_, t1]| t1)
}

fn stiff_kind(id: ProblemId) -> Option<Stiff1d> {
    match id {
        ProblemId::AllenCahn => Some(Stiff1d::AllenCahn),
        ProblemId::Nls => Some(Stiff1d::Nls),
        _ => None,
    }
}

fn oracle_grid(built: &BuiltProblem, kind: Stiff1d) -> Result<stiff::OracleGrid, ProblemError> {
    let t = stiff::time_grid(t_end(built), ORACLE_TIMES);
    stiff::oracle_cached(kind, ORACLE_RESOLUTION, &t, built.params.cache_dir.as_ref())
}

/// Errors against whatever exact or reference solution the problem has.
pub fn problem_errors(
    built: &BuiltProblem,
    compiled: &CompiledProblem,
    x: &[f64],
) -> Result<BTreeMap<String, Value>, ProblemError> {
    let mut out = BTreeMap::new();
    let mut put = |k: &str, v: f64| {
        out.insert(k.to_string(), json!(v));
    };
    match built.id {
        ProblemId::LaplacePeanut if built.params.harmonic_boundary => {
            let grid = in_domain_grid(&built.domain, GRID_SIDE);
            let exact: Vec<f64> = grid.iter().map(|p| oracle_laplace_harmonic(p)).collect();
            let (l2, linf) = error_metrics(&compiled.evaluate_field(x, 0, &grid)?, &exact)?;
            put("l2", l2);
            put("linf", linf);
        }
        ProblemId::LaplaceDataAssim => {
            if let Some(r) = &built.reference {
                let grid = in_domain_grid(&built.domain, GRID_SIDE);
                let (l2, linf) = error_metrics(&compiled.evaluate_field(x, 0, &grid)?, &r.evaluate(&grid)?)?;
                put("l2", l2);
                put("linf", linf);
            }
        }
        ProblemId::AllenCahn | ProblemId::Nls => {
            let kind = stiff_kind(built.id).expect("stiff problem");
            let (l2, linf) = stiff::compare(kind, &compiled.unpack(x)?, &oracle_grid(built, kind)?)?;
            put("l2", l2);
            put("linf", linf);
        }
        ProblemId::SphereDiffusion => {
            let d = built.scales["diffusivity"];
            let oracle = SphereOracle::new(sphere::ORACLE_LMAX, sphere::initial_condition)?;
            let line = meridian(200);
            for t in [0.1, 0.5, 1.0] {
                let pts: Vec<Vec<f64>> = line.iter().map(|q| vec![q[0], q[1], q[2], t]).collect();
                let exact: Vec<f64> = line.iter().map(|q| oracle.evaluate(q, d, t)).collect();
                let (_, linf) = error_metrics(&compiled.evaluate_field(x, 0, &pts)?, &exact)?;
                put(&format!("meridian_linf_t{t}"), linf);
            }
        }
        ProblemId::SsaSynthetic => {
            put("log_viscosity_l2", ssa::log_viscosity_rms(&compiled.unpack(x)?.remove(0))?);
        }
        ProblemId::HeatControl => {
            let t1 = t_end(built);
            let grid: Vec<Vec<f64>> = metrics::grid_2d((-1.0, 1.0), (-1.0, 1.0), GRID_SIDE, GRID_SIDE)
                .into_iter()
                .filter(|q| q[0].hypot(q[1]) <= 1.0)
                .map(|q| vec![q[0], q[1], t1])
                .collect();
            let target: Vec<f64> = grid.iter().map(|q| dots(q, HEAT_TARGET_ANGLES)).collect();
            let (l2, _) = error_metrics(&compiled.evaluate_field(x, 0, &grid)?, &target)?;
            let amp = target.iter().cloned().fold(0.0, f64::max);
            put("target_l2", l2);
            put("target_l2_fraction", l2 / amp);
        }
        _ => {}
    }
    Ok(out)
}

/// `(t, mass)` pairs of the concentration over the disk, for transport.
pub fn mass_series(built: &BuiltProblem, compiled: &CompiledProblem, x: &[f64]) -> Result<Vec<[f64; 2]>, ProblemError> {
    let c = compiled.unpack(x)?.remove(0);
    let t1 = t_end(built);
    (0..MASS_SAMPLES)
        .map(|k| {
            let t = t1 * k as f64 / (MASS_SAMPLES - 1) as f64;
            Ok([t, mass_integral(&c, [0.0, 0.0], 1.0, t, MASS_MC, built.params.seed)?])
        })
        .collect()
}

/// Singular values of each field with its first axis as rows.
pub fn singular_values(compiled: &CompiledProblem, x: &[f64]) -> Result<BTreeMap<String, Vec<f64>>, ProblemError> {
    let mut out = BTreeMap::new();
    for (decl, field) in compiled.fields().iter().zip(compiled.unpack(x)?) {
        let shape = decl.spec.shape();
        let rows = shape[0];
        let cols = shape[1..].iter().product::<usize>().max(1);
        out.insert(decl.name.clone(), field.coefficient_svd(rows, cols)?);
    }
    Ok(out)
}

/// The full metrics document for one solve.
pub fn metrics_document(
    built: &BuiltProblem,
    compiled: &CompiledProblem,
    report: &RunReport,
) -> Result<Value, ProblemError> {
    let x = &report.x;
    let names = compiled.term_names();
    let losses = compiled.term_losses(x)?;
    let weights = report.history.last().map(|h| h.weights.clone()).unwrap_or_else(|| compiled.default_weights());
    let by_name = |v: &[f64]| -> Map<String, Value> { names.iter().cloned().zip(v.iter().map(|v| json!(v))).collect() };
    let mut doc = json!({
        "problem": built.id.name(),
        "optimizer": built.optimizer.name(),
        "termination": report.termination,
        "iterations": report.iterations,
        "wall_time_s": report.wall_time,
        "n_coefficients": compiled.n_coeffs(),
        "final_loss": report.final_loss(),
        "term_losses": by_name(&losses),
        "weights": by_name(&weights),
        "scales": built.scales,
        "errors": problem_errors(built, compiled, x)?,
        "singular_values": singular_values(compiled, x)?,
    });
    if built.id == ProblemId::Transport {
        doc["mass_series"] = json!(mass_series(built, compiled, x)?);
    }
    Ok(doc)
}

/// Fixed evaluation points and reference values for a convergence sweep.
pub struct SweepReference {
    pub description: String,
    kind: ReferenceKind,
}

enum ReferenceKind {
    Points { points: Vec<Vec<f64>>, values: Vec<f64> },
    Oracle(Stiff1d, stiff::OracleGrid),
}

impl SweepReference {
    /// Exact or oracle solutions where they exist, otherwise a self-solve at `reference_modes`.
    pub fn new(template: &BuiltProblem, modes: &[usize]) -> Result<Self, ProblemError> {
        let params = &template.params;
        if let Some(kind) = stiff_kind(template.id) {
            return Ok(SweepReference {
                description: format!("{kind:?} time-stepping oracle"),
                kind: ReferenceKind::Oracle(kind, oracle_grid(template, kind)?),
            });
        }
        if template.id == ProblemId::LaplacePeanut {
            let points = in_domain_grid(&template.domain, GRID_SIDE);
            if params.harmonic_boundary {
                let values = points.iter().map(|p| oracle_laplace_harmonic(p)).collect();
                return Ok(SweepReference {
                    description: "harmonic cubic".into(),
                    kind: ReferenceKind::Points { points, values },
                });
            }
            let n = params.reference_modes.unwrap_or(laplace::DEFAULT_REFERENCE_MODES);
            let r = laplace::self_reference(params)?.reference.expect("reference field");
            let values = r.evaluate(&points)?;
            return Ok(SweepReference {
                description: format!("self-reference N={n}"),
                kind: ReferenceKind::Points { points, values },
            });
        }
        let n = params.reference_modes.unwrap_or(modes.iter().max().copied().unwrap_or(10) + 10);
        let mut p = params.clone();
        p.modes = Some(n);
        p.field_modes.clear();
        let mut built = problems::build(template.id, &p)?;
        built.optimizer = template.optimizer;
        built.spec.weighting = template.spec.weighting;
        let (compiled, report) = problems::solve(&built)?;
        if report.termination.is_failure() {
            return Err(ProblemError::Reference(format!("{:?}", report.termination)));
        }
        let points = built
            .domain
            .sample_interior(SWEEP_POINTS, &mut stream_rng(params.seed, "sweep-reference"))?;
        let values = compiled.evaluate_field(&report.x, 0, &points)?;
        Ok(SweepReference { description: format!("self-reference N={n}"), kind: ReferenceKind::Points { points, values } })
    }

    /// `(L2, Linf)` of the first field (or `|g|` for NLS).
    pub fn errors(&self, compiled: &CompiledProblem, x: &[f64]) -> Result<(f64, f64), ProblemError> {
        match &self.kind {
            ReferenceKind::Points { points, values } => Ok(error_metrics(&compiled.evaluate_field(x, 0, points)?, values)?),
            ReferenceKind::Oracle(kind, grid) => stiff::compare(*kind, &compiled.unpack(x)?, grid),
        }
    }
}
