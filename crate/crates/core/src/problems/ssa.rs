//! Shallow-shelf ice flow: a forward solve from a known viscosity produces synthetic
//! observations, and the inversion recovers `log(mu)` from them.

use std::collections::BTreeMap;

use rand::Rng;

use super::{
    axes, basis, cached_solution, default_optimizer, default_weighting, metrics, stream, tensor, BuiltProblem,
    ProblemError, ProblemId, ProblemParams, CONSTANTS,
};
use crate::basis::BasisFamily;
use crate::field::{CoefficientField, OutputTransform};
use crate::geometry::{DomainSpec, Shape};
use crate::optimize::{OptimizerConfig, SecondOrderConfig};
use crate::residual::{CollocationSet, Expr, FieldDecl, LossTerm, ProblemSpec, TermKind, Weighting};

pub const LENGTH_SCALE: f64 = 50_000.0;
pub const THICKNESS_SCALE: f64 = 500.0;
pub const SECONDS_PER_YEAR: f64 = 365.25 * 24.0 * 3600.0;
/// Velocity scale in m/yr.
pub const VELOCITY_SCALE: f64 = 500.0;
pub const DEFAULT_REFERENCE_MODES: usize = 40;
pub const METRIC_GRID: usize = 50;

/// Viscosity scale that makes the non-dimensional driving-stress coefficient one.
pub fn viscosity_scale() -> f64 {
    let c = CONSTANTS;
    c.rho_ice * c.gravity * (1.0 - c.rho_ice / c.rho_water) * THICKNESS_SCALE * LENGTH_SCALE
        / (VELOCITY_SCALE / SECONDS_PER_YEAR)
}

/// `(h, h_x, h_y)` of the synthetic thickness.
pub fn thickness(x: f64, y: f64) -> [f64; 3] {
    let g = 0.05 * (-(x * x + y * y) / 0.3).exp();
    [1.0 - 0.175 * (x + 1.0) + g, -0.175 - g * 2.0 * x / 0.3, -g * 2.0 * y / 0.3]
}

/// `(phi, phi_x, phi_y)` of the true log-viscosity.
pub fn log_viscosity(x: f64, y: f64) -> [f64; 3] {
    let (ax, ay) = (x + 0.35, y - 0.3);
    let (bx, by) = (x - 0.35, y + 0.3);
    let a = 0.5 * (-(ax * ax + ay * ay) / 0.15).exp();
    let b = 0.4 * (-(bx * bx + by * by) / 0.12).exp();
    [a - b, -a * 2.0 * ax / 0.15 + b * 2.0 * bx / 0.12, -a * 2.0 * ay / 0.15 + b * 2.0 * by / 0.12]
}

pub fn inflow_speed(y: f64) -> f64 {
    1.0 + 0.3 * (std::f64::consts::PI * y).cos()
}

/// Expressions for `m`, `m_x`, `m_y`, `h`, `h_x`, `h_y`.
struct Coefficients {
    m: Expr,
    mx: Expr,
    my: Expr,
    h: Expr,
    hx: Expr,
    hy: Expr,
}

/// Momentum balance `(E1, E2)` with velocity fields at indices `u`, `v`.
fn momentum(k: &Coefficients, u: usize, v: usize) -> Vec<Expr> {
    let ju = |i: [usize; 2]| Expr::jet(u, i);
    let jv = |i: [usize; 2]| Expr::jet(v, i);
    let shear = ju([0, 1]) + jv([1, 0]);
    let e1 = k.m.clone() * (4.0 * ju([2, 0]) + 2.0 * jv([1, 1]))
        + k.mx.clone() * (4.0 * ju([1, 0]) + 2.0 * jv([0, 1]))
        + k.m.clone() * (ju([0, 2]) + jv([1, 1]))
        + k.my.clone() * shear.clone()
        - k.h.clone() * k.hx.clone();
    let e2 = k.m.clone() * (4.0 * jv([0, 2]) + 2.0 * ju([1, 1]))
        + k.my.clone() * (4.0 * jv([0, 1]) + 2.0 * ju([1, 0]))
        + k.m.clone() * (ju([1, 1]) + jv([2, 0]))
        + k.mx.clone() * shear
        - k.h.clone() * k.hy.clone();
    vec![e1, e2]
}

/// Calving-front stress balance `(B1, B2)` with outward normal from the set.
fn front(k: &Coefficients, u: usize, v: usize) -> Vec<Expr> {
    let ju = |i: [usize; 2]| Expr::jet(u, i);
    let jv = |i: [usize; 2]| Expr::jet(v, i);
    let (nx, ny) = (Expr::normal(0), Expr::normal(1));
    let shear = ju([0, 1]) + jv([1, 0]);
    let hydro = 0.5 * k.h.clone().square();
    let b1 = 2.0 * k.m.clone() * (2.0 * ju([1, 0]) + jv([0, 1])) * nx.clone()
        + k.m.clone() * shear.clone() * ny.clone()
        - hydro.clone() * nx.clone();
    let b2 = k.m.clone() * shear * nx + 2.0 * k.m.clone() * (ju([1, 0]) + 2.0 * jv([0, 1])) * ny.clone()
        - hydro * ny;
    vec![b1, b2]
}

fn square_spec(n: &[usize]) -> Result<crate::basis::TensorBasisSpec, ProblemError> {
    tensor(vec![
        basis(BasisFamily::Chebyshev, n[0], -1.0, 1.0)?,
        basis(BasisFamily::Chebyshev, n[1], -1.0, 1.0)?,
    ])
}

fn uniform(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]).collect()
}

/// Points on the face `axis = value`, uniform along the other coordinate.
fn face(n: usize, axis: usize, value: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let s = rng.gen_range(-1.0..=1.0);
            if axis == 0 {
                vec![value, s]
            } else {
                vec![s, value]
            }
        })
        .collect()
}

fn with_columns(set: CollocationSet) -> CollocationSet {
    let pts = set.points.clone();
    let col = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pts.iter().map(|p| f(p[0], p[1])).collect() };
    let mu = |x: f64, y: f64| log_viscosity(x, y)[0].exp();
    let m = |x: f64, y: f64, i: usize| {
        let [h, hx, hy] = thickness(x, y);
        let [_, px, py] = log_viscosity(x, y);
        let mu = mu(x, y);
        [mu * h, mu * (px * h + hx), mu * (py * h + hy)][i]
    };
    set.with_data("h", col(&|x, y| thickness(x, y)[0]))
        .with_data("h_x", col(&|x, y| thickness(x, y)[1]))
        .with_data("h_y", col(&|x, y| thickness(x, y)[2]))
        .with_data("m", col(&|x, y| m(x, y, 0)))
        .with_data("m_x", col(&|x, y| m(x, y, 1)))
        .with_data("m_y", col(&|x, y| m(x, y, 2)))
}

fn data_coefficients() -> Coefficients {
    Coefficients {
        m: Expr::data("m"),
        mx: Expr::data("m_x"),
        my: Expr::data("m_y"),
        h: Expr::data("h"),
        hx: Expr::data("h_x"),
        hy: Expr::data("h_y"),
    }
}

fn scales() -> BTreeMap<String, f64> {
    let mut s = BTreeMap::new();
    s.insert("length_m".to_string(), LENGTH_SCALE);
    s.insert("thickness_m".to_string(), THICKNESS_SCALE);
    s.insert("velocity_m_per_yr".to_string(), VELOCITY_SCALE);
    s.insert("viscosity_pa_s".to_string(), viscosity_scale());
    s
}

fn domain() -> DomainSpec {
    DomainSpec::new(Shape::Hyperrectangle { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] })
}

/// Forward velocity solve with the true viscosity and thickness; Chebyshev `(N+1, N+1)` for `u`, `v`.
pub fn build_forward(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::SsaSynthetic;
    let n = params.reference_modes.unwrap_or(DEFAULT_REFERENCE_MODES) + 1;
    let spec = square_spec(&[n, n])?;
    let n_pde = 4 * n * n;
    let n_face = 10 * n;
    let mut rng = stream(params, id, "forward");
    let pde = with_columns(CollocationSet::new("pde", uniform(n_pde, &mut rng)));
    let inflow_pts = face(n_face, 0, -1.0, &mut rng);
    let u_in: Vec<f64> = inflow_pts.iter().map(|p| inflow_speed(p[1])).collect();
    let mut walls = face(n_face, 1, -1.0, &mut rng);
    walls.extend(face(n_face, 1, 1.0, &mut rng));
    let front_pts = face(n_face, 0, 1.0, &mut rng);
    let front_nrm = vec![vec![1.0, 0.0]; front_pts.len()];
    let k = data_coefficients();
    let (u, v) = (Expr::value(0), Expr::value(1));
    let sets = vec![
        pde,
        CollocationSet::new("inflow", inflow_pts).with_data("u_in", u_in),
        CollocationSet::new("walls", walls),
        with_columns(CollocationSet::new("front", front_pts).with_normals(front_nrm)),
    ];
    let terms = vec![
        LossTerm::new("pde", TermKind::Pde, "pde", momentum(&k, 0, 1)),
        LossTerm::new("inflow", TermKind::Boundary, "inflow", vec![u - Expr::data("u_in"), v.clone()]),
        LossTerm::new("walls", TermKind::Boundary, "walls", vec![v, Expr::jet(0, [0, 1])]),
        LossTerm::new("front", TermKind::Boundary, "front", front(&k, 0, 1)),
    ];
    Ok(BuiltProblem {
        id,
        spec: ProblemSpec {
            fields: vec![
                FieldDecl::new("u", spec.clone(), OutputTransform::Identity),
                FieldDecl::new("v", spec, OutputTransform::Identity),
            ],
            sets,
            terms,
            weighting: Weighting::Fixed,
        },
        domain: domain(),
        optimizer: OptimizerConfig::Dogleg(SecondOrderConfig::dogleg()),
        axes: vec![axes(&["x", "y"]); 2],
        scales: scales(),
        reference: None,
        params: params.clone(),
    })
}

/// Forward `(u, v)` fields, solved once per parameter set and cached.
pub fn forward_solution(params: &ProblemParams) -> Result<Vec<CoefficientField>, ProblemError> {
    let built = build_forward(params)?;
    let n = params.reference_modes.unwrap_or(DEFAULT_REFERENCE_MODES);
    cached_solution(&built, &format!("ssa-forward n={n} seed={}", params.seed))
}

/// Inversion for `mu = exp(phi)`, `h`, `u`, `v` on Chebyshev (21, 21) from observations of
/// `h`, `u`, `v`, with the momentum balance and optionally the calving-front condition.
pub fn build(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::SsaSynthetic;
    let truth = forward_solution(params)?;
    let mut fields = Vec::new();
    for (name, transform) in [
        ("mu", OutputTransform::Exp),
        ("h", OutputTransform::Identity),
        ("u", OutputTransform::Identity),
        ("v", OutputTransform::Identity),
    ] {
        fields.push(FieldDecl::new(name, square_spec(&params.shape(name, &[21, 21])?)?, transform));
    }
    let pde = uniform(params.count("pde", 2_000)?, &mut stream(params, id, "pde"));
    let data = uniform(params.count("data", 2_000)?, &mut stream(params, id, "data"));
    let u_obs = truth[0].evaluate(&data)?;
    let v_obs = truth[1].evaluate(&data)?;
    let h_obs: Vec<f64> = data.iter().map(|p| thickness(p[0], p[1])[0]).collect();

    let mu = Expr::value(0);
    let h = Expr::value(1);
    let k = Coefficients {
        m: mu.clone() * h.clone(),
        mx: mu.clone() * (Expr::jet(0, [1, 0]) * h.clone() + Expr::jet(1, [1, 0])),
        my: mu * (Expr::jet(0, [0, 1]) * h.clone() + Expr::jet(1, [0, 1])),
        h,
        hx: Expr::jet(1, [1, 0]),
        hy: Expr::jet(1, [0, 1]),
    };
    let mut sets = vec![
        CollocationSet::new("pde", pde),
        CollocationSet::new("data", data)
            .with_data("h_obs", h_obs)
            .with_data("u_obs", u_obs)
            .with_data("v_obs", v_obs),
    ];
    let mut terms = vec![
        LossTerm::new("pde", TermKind::Pde, "pde", momentum(&k, 2, 3)),
        LossTerm::new(
            "data",
            TermKind::Data,
            "data",
            vec![
                Expr::value(1) - Expr::data("h_obs"),
                Expr::value(2) - Expr::data("u_obs"),
                Expr::value(3) - Expr::data("v_obs"),
            ],
        ),
    ];
    if params.calving_front.unwrap_or(true) {
        let pts = face(params.count("front", 600)?, 0, 1.0, &mut stream(params, id, "front"));
        let nrm = vec![vec![1.0, 0.0]; pts.len()];
        sets.push(CollocationSet::new("front", pts).with_normals(nrm));
        terms.push(LossTerm::new("front", TermKind::Boundary, "front", front(&k, 2, 3)));
    }
    Ok(BuiltProblem {
        id,
        spec: ProblemSpec { fields, sets, terms, weighting: default_weighting(id) },
        domain: domain(),
        optimizer: default_optimizer(id),
        axes: vec![axes(&["x", "y"]); 4],
        scales: scales(),
        reference: None,
        params: params.clone(),
    })
}

/// RMS of `log(mu) - phi*` on a uniform `50 x 50` grid.
pub fn log_viscosity_rms(mu: &CoefficientField) -> Result<f64, ProblemError> {
    let grid: Vec<Vec<f64>> =
        metrics::grid_2d((-1.0, 1.0), (-1.0, 1.0), METRIC_GRID, METRIC_GRID).into_iter().map(|p| p.to_vec()).collect();
    let phi = mu.evaluate_raw(&grid)?;
    let truth: Vec<f64> = grid.iter().map(|p| log_viscosity(p[0], p[1])[0]).collect();
    Ok(metrics::error_metrics(&phi, &truth)?.0)
}
