//! Time-dependent 2D problems: the wave pulse, heat control on the disk, and driven transport.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;

use super::{
    axes, basis, default_optimizer, default_weighting, stream, tensor, BuiltProblem, ProblemError, ProblemId,
    ProblemParams, CONSTANTS,
};
use crate::basis::BasisFamily;
use crate::field::OutputTransform;
use crate::geometry::raster::{Extent, GrayRaster};
use crate::geometry::{BoundarySample, DomainSpec};
use crate::residual::{CollocationSet, Expr, FieldDecl, FieldInput, LossTerm, ProblemSpec, TermKind};

pub const PULSE_CENTER: [f64; 2] = [-0.3, 0.1];
pub const PULSE_AMPLITUDE: f64 = 0.5;
pub const PULSE_WIDTH_SQ: f64 = 0.16;
pub const DOT_SIGMA: f64 = 0.15;
pub const DOT_RADIUS: f64 = 0.5;
pub const TARGET_MASS: f64 = 0.5;
pub const TARGET_RESOLUTION: usize = 64;
pub const TARGET_BLUR: usize = 2;
pub const DEFAULT_TARGETS: usize = 7;

fn split(samples: Vec<BoundarySample>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    samples.into_iter().map(|s| (s.point, s.normal)).unzip()
}

fn finish(
    id: ProblemId,
    params: &ProblemParams,
    domain: DomainSpec,
    fields: Vec<FieldDecl>,
    sets: Vec<CollocationSet>,
    terms: Vec<LossTerm>,
    axes: Vec<Vec<String>>,
    scales: BTreeMap<String, f64>,
) -> BuiltProblem {
    BuiltProblem {
        id,
        spec: ProblemSpec { fields, sets, terms, weighting: default_weighting(id) },
        domain,
        optimizer: default_optimizer(id),
        axes,
        scales,
        reference: None,
        params: params.clone(),
    }
}

/// `0.5 exp(-|x - x0|^2 / 0.16)`.
pub fn pulse(p: &[f64]) -> f64 {
    let (dx, dy) = (p[0] - PULSE_CENTER[0], p[1] - PULSE_CENTER[1]);
    PULSE_AMPLITUDE * (-(dx * dx + dy * dy) / PULSE_WIDTH_SQ).exp()
}

/// Peanut without hole, `t in [0, 2]`, Legendre (13, 13, 13); reflecting walls, pulse at rest.
pub fn build_wave(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::WavePeanut;
    let t_end = ProblemParams::positive("t_end", params.t_end, 2.0)?;
    let domain = DomainSpec::peanut(vec![]).with_time(0.0, t_end);
    let (lo, hi) = domain.bounding_box();
    let n = params.shape("u", &[13, 13, 13])?;
    let spec = tensor(vec![
        basis(BasisFamily::Legendre, n[0], lo[0], hi[0])?,
        basis(BasisFamily::Legendre, n[1], lo[1], hi[1])?,
        basis(BasisFamily::Legendre, n[2], 0.0, t_end)?,
    ])?;
    let pde = domain.sample_interior(params.count("pde", 30_000)?, &mut stream(params, id, "pde"))?;
    let (bnd, nrm) =
        split(domain.sample_boundary(params.count("boundary", 10_000)?, &mut stream(params, id, "boundary"))?);
    let init = domain.sample_initial(params.count("initial", 30_000)?, &mut stream(params, id, "initial"))?;
    let u0: Vec<f64> = init.iter().map(|p| pulse(p)).collect();
    let u = |i: [usize; 3]| Expr::jet(0, i);
    let terms = vec![
        LossTerm::new("pde", TermKind::Pde, "pde", vec![u([0, 0, 2]) - u([2, 0, 0]) - u([0, 2, 0])]),
        LossTerm::new(
            "boundary",
            TermKind::Boundary,
            "boundary",
            vec![u([1, 0, 0]) * Expr::normal(0) + u([0, 1, 0]) * Expr::normal(1)],
        ),
        LossTerm::new("initial", TermKind::Initial, "initial", vec![Expr::value(0) - Expr::data("u0")]),
        LossTerm::new("initial-velocity", TermKind::Initial, "initial", vec![u([0, 0, 1])]),
    ];
    let sets = vec![
        CollocationSet::new("pde", pde),
        CollocationSet::new("boundary", bnd).with_normals(nrm),
        CollocationSet::new("initial", init).with_data("u0", u0),
    ];
    let fields = vec![FieldDecl::new("u", spec, OutputTransform::Identity)];
    Ok(finish(id, params, domain, fields, sets, terms, vec![axes(&["x", "y", "t"])], BTreeMap::new()))
}

/// Sum of three Gaussians of width 0.15 at radius 0.5 and the given angles in degrees.
pub fn dots(p: &[f64], angles_deg: [f64; 3]) -> f64 {
    angles_deg
        .iter()
        .map(|a| {
            let th = a.to_radians();
            let (dx, dy) = (p[0] - DOT_RADIUS * th.cos(), p[1] - DOT_RADIUS * th.sin());
            (-(dx * dx + dy * dy) / (2.0 * DOT_SIGMA * DOT_SIGMA)).exp()
        })
        .sum()
}

pub const HEAT_INITIAL_ANGLES: [f64; 3] = [90.0, 210.0, 330.0];
pub const HEAT_TARGET_ANGLES: [f64; 3] = [270.0, 30.0, 150.0];

/// Spatial disk samples at a fixed time.
fn slice(domain: &DomainSpec, n: usize, t: f64, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>, ProblemError> {
    let spatial = DomainSpec { shape: domain.shape.clone(), time: None };
    let mut pts = spatial.sample_initial(n, rng)?;
    for p in pts.iter_mut() {
        p.push(t);
    }
    Ok(pts)
}

/// Unit disk, `t in [0, 2]`: temperature `u` driven by a boundary forcing `f(theta, t)` so that the
/// triangle of dots at `t = 0` becomes the inverted triangle at `t = 2`.
pub fn build_heat(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::HeatControl;
    let t_end = ProblemParams::positive("t_end", params.t_end, 2.0)?;
    let alpha = ProblemParams::positive("diffusivity", params.diffusivity, CONSTANTS.heat_diffusivity)?;
    let domain = DomainSpec::disk([0.0, 0.0], 1.0).with_time(0.0, t_end);
    let nu = params.shape("u", &[11, 11, 11])?;
    let nf = params.shape("f", &[11, 11])?;
    let u_spec = tensor(vec![
        basis(BasisFamily::Chebyshev, nu[0], -1.0, 1.0)?,
        basis(BasisFamily::Chebyshev, nu[1], -1.0, 1.0)?,
        basis(BasisFamily::Chebyshev, nu[2], 0.0, t_end)?,
    ])?;
    let f_spec = tensor(vec![
        basis(BasisFamily::FourierFull, nf[0], 0.0, 2.0 * PI)?,
        basis(BasisFamily::Chebyshev, nf[1], 0.0, t_end)?,
    ])?;
    let fields = vec![
        FieldDecl::new("u", u_spec, OutputTransform::Identity),
        FieldDecl::new("f", f_spec, OutputTransform::Identity)
            .with_inputs(vec![FieldInput::PolarAngle { x: 0, y: 1 }, FieldInput::Axis(2)]),
    ];
    let pde = domain.sample_interior(params.count("pde", 30_000)?, &mut stream(params, id, "pde"))?;
    let (bnd, nrm) =
        split(domain.sample_boundary(params.count("boundary", 15_000)?, &mut stream(params, id, "boundary"))?);
    let init = domain.sample_initial(params.count("initial", 2_000)?, &mut stream(params, id, "initial"))?;
    let data = slice(&domain, params.count("data", 2_000)?, t_end, &mut stream(params, id, "data"))?;
    let u0: Vec<f64> = init.iter().map(|p| dots(p, HEAT_INITIAL_ANGLES)).collect();
    let u_target: Vec<f64> = data.iter().map(|p| dots(p, HEAT_TARGET_ANGLES)).collect();
    let u = |i: [usize; 3]| Expr::jet(0, i);
    let terms = vec![
        LossTerm::new("pde", TermKind::Pde, "pde", vec![u([0, 0, 1]) - alpha * (u([2, 0, 0]) + u([0, 2, 0]))]),
        LossTerm::new("boundary", TermKind::Boundary, "boundary", vec![Expr::value(0) - Expr::value(1)]),
        LossTerm::new("initial", TermKind::Initial, "initial", vec![Expr::value(0) - Expr::data("u0")]),
        LossTerm::new("target", TermKind::Target, "data", vec![Expr::value(0) - Expr::data("u_target")]),
    ];
    let sets = vec![
        CollocationSet::new("pde", pde),
        CollocationSet::new("boundary", bnd).with_normals(nrm),
        CollocationSet::new("initial", init).with_data("u0", u0),
        CollocationSet::new("data", data).with_data("u_target", u_target),
    ];
    let mut scales = BTreeMap::new();
    scales.insert("diffusivity".to_string(), alpha);
    let ax = vec![axes(&["x", "y", "t"]), axes(&["theta", "t"])];
    Ok(finish(id, params, domain, fields, sets, terms, ax, scales))
}

/// Indicator of the `k`-th built-in target shape (cycled), before blurring.
pub fn synthetic_shape(k: usize, x: f64, y: f64) -> bool {
    let r = (x * x + y * y).sqrt();
    match k % DEFAULT_TARGETS {
        0 => r < 0.35,
        1 => x.abs() < 0.5 && y.abs() < 0.15,
        2 => r > 0.25 && r < 0.45,
        3 => (x.abs() < 0.12 && y.abs() < 0.5) || (y.abs() < 0.12 && x.abs() < 0.5),
        4 => x.abs() < 0.3 && y.abs() < 0.3,
        5 => ((x - 0.35).powi(2) + y * y).sqrt() < 0.2 || ((x + 0.35).powi(2) + y * y).sqrt() < 0.2,
        _ => x.abs() < 0.15 && y.abs() < 0.5,
    }
}

/// Blurs and rescales each raster to integral [`TARGET_MASS`].
pub fn normalize_targets(rasters: &[GrayRaster]) -> Result<Vec<GrayRaster>, ProblemError> {
    rasters
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut b = r.box_blur(TARGET_BLUR);
            let total = b.integral();
            if !(total > 0.0) {
                return Err(ProblemError::param(&format!("targets[{k}]"), "target image has no mass"));
            }
            b.values.iter_mut().for_each(|v| *v *= TARGET_MASS / total);
            Ok(b)
        })
        .collect()
}

/// The transport targets: given rasters, or `n_targets` built-in shapes.
pub fn transport_targets(params: &ProblemParams) -> Result<Vec<GrayRaster>, ProblemError> {
    let raw = match &params.targets {
        Some(t) => t.clone(),
        None => {
            let k = params.n_targets.unwrap_or(DEFAULT_TARGETS);
            (0..k)
                .map(|i| {
                    GrayRaster::from_fn(TARGET_RESOLUTION, TARGET_RESOLUTION, Extent::square(1.0), |x, y| {
                        if synthetic_shape(i, x, y) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        }
    };
    if raw.len() < 2 {
        return Err(ProblemError::param("n_targets", format!("need at least 2 targets, got {}", raw.len())));
    }
    normalize_targets(&raw)
}

/// Times `t_k = t_end k / (K - 1)` at which the targets apply.
pub fn target_times(k: usize, t_end: f64) -> Vec<f64> {
    (0..k).map(|i| t_end * i as f64 / (k - 1) as f64).collect()
}

/// Unit disk, `t in [0, 2]`: concentration `c` advected by a divergence-free, no-flow-through
/// velocity `(u, v)` so that it passes through each target in turn.
pub fn build_transport(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::Transport;
    let t_end = ProblemParams::positive("t_end", params.t_end, 2.0)?;
    let d = ProblemParams::positive("diffusivity", params.diffusivity, CONSTANTS.transport_diffusivity)?;
    let domain = DomainSpec::disk([0.0, 0.0], 1.0).with_time(0.0, t_end);
    let targets = transport_targets(params)?;
    let times = target_times(targets.len(), t_end);
    let mut fields = Vec::new();
    for name in ["c", "u", "v"] {
        let n = params.shape(name, &[16, 16, 16])?;
        let spec = tensor(vec![
            basis(BasisFamily::Chebyshev, n[0], -1.0, 1.0)?,
            basis(BasisFamily::Chebyshev, n[1], -1.0, 1.0)?,
            basis(BasisFamily::Chebyshev, n[2], 0.0, t_end)?,
        ])?;
        fields.push(FieldDecl::new(name, spec, OutputTransform::Identity));
    }
    let pde = domain.sample_interior(params.count("pde", 30_000)?, &mut stream(params, id, "pde"))?;
    let (bnd, nrm) =
        split(domain.sample_boundary(params.count("boundary", 30_000)?, &mut stream(params, id, "boundary"))?);
    let init = slice(&domain, params.count("initial", 10_000)?, 0.0, &mut stream(params, id, "initial"))?;
    let c0: Vec<f64> = init.iter().map(|p| targets[0].sample(p[0], p[1])).collect();
    let n_data = params.count("data", 10_000)?;
    let mut rng = stream(params, id, "data");
    let mut data = slice(&domain, n_data, 0.0, &mut rng)?;
    let mut c_obs = Vec::with_capacity(n_data);
    for (i, p) in data.iter_mut().enumerate() {
        let k = 1 + i % (targets.len() - 1);
        p[2] = times[k];
        c_obs.push(targets[k].sample(p[0], p[1]));
    }
    let j = |f: usize, i: [usize; 3]| Expr::jet(f, i);
    let advection = j(0, [0, 0, 1]) + Expr::value(1) * j(0, [1, 0, 0]) + Expr::value(2) * j(0, [0, 1, 0])
        - d * (j(0, [2, 0, 0]) + j(0, [0, 2, 0]));
    let terms = vec![
        LossTerm::new("pde", TermKind::Pde, "pde", vec![advection]),
        LossTerm::new("divergence", TermKind::Pde, "pde", vec![j(1, [1, 0, 0]) + j(2, [0, 1, 0])]),
        LossTerm::new(
            "boundary",
            TermKind::Boundary,
            "boundary",
            vec![
                Expr::value(1),
                Expr::value(2),
                j(0, [1, 0, 0]) * Expr::normal(0) + j(0, [0, 1, 0]) * Expr::normal(1),
            ],
        ),
        LossTerm::new("initial", TermKind::Initial, "initial", vec![Expr::value(0) - Expr::data("c0")]),
        LossTerm::new("data", TermKind::Target, "data", vec![Expr::value(0) - Expr::data("c_obs")]),
    ];
    let sets = vec![
        CollocationSet::new("pde", pde),
        CollocationSet::new("boundary", bnd).with_normals(nrm),
        CollocationSet::new("initial", init).with_data("c0", c0),
        CollocationSet::new("data", data).with_data("c_obs", c_obs),
    ];
    let mut scales = BTreeMap::new();
    scales.insert("diffusivity".to_string(), d);
    scales.insert("target_mass".to_string(), TARGET_MASS);
    let ax = vec![axes(&["x", "y", "t"]); 3];
    Ok(finish(id, params, domain, fields, sets, terms, ax, scales))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::raster::Extent;

    #[test]
    fn pulse_peak_and_decay() {
        assert!((pulse(&[-0.3, 0.1]) - 0.5).abs() < 1e-15);
        assert!((pulse(&[0.1, 0.1]) - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn wave_defaults() {
        let b = build_wave(&ProblemParams::default().with_points("pde", 50).with_points("boundary", 20).with_points("initial", 30))
            .unwrap();
        assert_eq!(b.spec.fields[0].spec.shape(), vec![13, 13, 13]);
        assert_eq!(b.spec.terms.len(), 4);
        let bnd = &b.spec.sets[1];
        for (p, n) in bnd.points.iter().zip(bnd.normals.as_ref().unwrap()) {
            assert_eq!(p.len(), 3);
            assert!((n[0] * n[0] + n[1] * n[1] - 1.0).abs() < 1e-12);
        }
        assert!(b.spec.sets[2].points.iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn dots_are_rotations_of_each_other() {
        let p = [0.2, -0.1];
        let th = PI / 3.0;
        let q = [p[0] * th.cos() - p[1] * th.sin(), p[0] * th.sin() + p[1] * th.cos()];
        assert!((dots(&p, HEAT_INITIAL_ANGLES) - dots(&q, HEAT_TARGET_ANGLES)).abs() < 1e-12);
        assert!(dots(&[0.0, 0.5], HEAT_INITIAL_ANGLES) > 1.0);
    }

    #[test]
    fn heat_boundary_forcing_reads_angle() {
        let b = build_heat(&ProblemParams::default().with_points("pde", 10).with_points("boundary", 10)
            .with_points("initial", 10).with_points("data", 10))
        .unwrap();
        assert_eq!(b.spec.fields[1].inputs[0], FieldInput::PolarAngle { x: 0, y: 1 });
        assert!(b.spec.sets[3].points.iter().all(|p| p[2] == 2.0 && p[0].hypot(p[1]) <= 1.0));
        assert_eq!(b.spec.terms[3].kind, TermKind::Target);
    }

    #[test]
    fn targets_have_equal_mass() {
        let t = transport_targets(&ProblemParams::default()).unwrap();
        assert_eq!(t.len(), DEFAULT_TARGETS);
        for r in &t {
            assert!((r.integral() - TARGET_MASS).abs() < 1e-12);
            // support stays inside the unit disk
            for i in 0..r.height {
                for j in 0..r.width {
                    let (x, y) = r.cell_center(i, j);
                    if x.hypot(y) > 0.95 {
                        assert!(r.at(i, j).abs() < 1e-12);
                    }
                }
            }
        }
        let blank = GrayRaster::from_fn(8, 8, Extent::square(1.0), |_, _| 0.0);
        let mut p = ProblemParams::default();
        p.targets = Some(vec![blank.clone(), blank]);
        assert!(transport_targets(&p).is_err());
    }

    #[test]
    fn transport_data_times() {
        let mut p = ProblemParams::default().with_points("pde", 10).with_points("boundary", 10)
            .with_points("initial", 10).with_points("data", 12);
        p.n_targets = Some(3);
        let b = build_transport(&p).unwrap();
        let data = &b.spec.sets[3].points;
        let ts: Vec<f64> = data.iter().map(|p| p[2]).collect();
        assert_eq!(&ts[..4], &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(target_times(3, 2.0), vec![0.0, 1.0, 2.0]);
        assert_eq!(b.spec.fields.len(), 3);
    }
}
