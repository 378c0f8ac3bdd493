//! Laplace equation on the peanut, with boundary data, interior data, or a raster mask.


use super::{
    axes, basis, build as build_id, cached_solution, default_optimizer, default_weighting, stream, tensor,
    BuiltProblem, Observations, ProblemError, ProblemId, ProblemParams,
};
use crate::basis::BasisFamily;
use crate::field::OutputTransform;
use crate::geometry::raster::{Extent, RasterMask};
use crate::geometry::{BoundarySample, BoundaryTag, DomainSpec, Hole, Shape};
use crate::residual::{CollocationSet, Expr, FieldDecl, LossTerm, ProblemSpec, TermKind};

pub const HOLE: Hole = Hole { center: [0.3, 0.1], radius: 0.15 };
pub const INNER_VALUE: f64 = -2.0;
pub const DEFAULT_OBSERVATIONS: usize = 379;
pub const DEFAULT_REFERENCE_MODES: usize = 60;

/// `u* = x^3 - 3 x y^2`, harmonic everywhere.
pub fn oracle_laplace_harmonic(p: &[f64]) -> f64 {
    let (x, y) = (p[0], p[1]);
    x * x * x - 3.0 * x * y * y
}

/// Outer data `2 sin(theta) + cos(3 theta)`.
pub fn outer_value(p: &[f64]) -> f64 {
    let th = p[1].atan2(p[0]);
    2.0 * th.sin() + (3.0 * th).cos()
}

pub fn peanut_domain() -> DomainSpec {
    DomainSpec::peanut(vec![HOLE])
}

fn boundary_value(s: &BoundarySample, harmonic: bool) -> f64 {
    if harmonic {
        return oracle_laplace_harmonic(&s.point);
    }
    match s.tag {
        BoundaryTag::Hole(_) => INNER_VALUE,
        _ => outer_value(&s.point),
    }
}

fn laplacian() -> Expr {
    Expr::jet(0, [2, 0]) + Expr::jet(0, [0, 2])
}

fn square_field(n: &[usize]) -> Result<FieldDecl, ProblemError> {
    let spec = tensor(vec![
        basis(BasisFamily::Chebyshev, n[0], -1.0, 1.0)?,
        basis(BasisFamily::Chebyshev, n[1], -1.0, 1.0)?,
    ])?;
    Ok(FieldDecl::new("u", spec, OutputTransform::Identity))
}

fn finish(
    id: ProblemId,
    params: &ProblemParams,
    domain: DomainSpec,
    field: FieldDecl,
    sets: Vec<CollocationSet>,
    terms: Vec<LossTerm>,
) -> BuiltProblem {
    BuiltProblem {
        id,
        spec: ProblemSpec { fields: vec![field], sets, terms, weighting: default_weighting(id) },
        domain,
        optimizer: default_optimizer(id),
        axes: vec![axes(&["x", "y"])],
        scales: Default::default(),
        reference: None,
        params: params.clone(),
    }
}

fn dirichlet_sets(
    id: ProblemId,
    params: &ProblemParams,
    domain: &DomainSpec,
    defaults: (usize, usize),
    value: impl Fn(&BoundarySample) -> f64,
) -> Result<(Vec<CollocationSet>, Vec<LossTerm>), ProblemError> {
    let pde = domain.sample_interior(params.count("pde", defaults.0)?, &mut stream(params, id, "pde"))?;
    let bnd = domain.sample_boundary(params.count("boundary", defaults.1)?, &mut stream(params, id, "boundary"))?;
    let g: Vec<f64> = bnd.iter().map(&value).collect();
    let (pts, nrm): (Vec<_>, Vec<_>) = bnd.into_iter().map(|s| (s.point, s.normal)).unzip();
    let sets = vec![
        CollocationSet::new("pde", pde),
        CollocationSet::new("boundary", pts).with_normals(nrm).with_data("g", g),
    ];
    let terms = vec![
        LossTerm::new("pde", TermKind::Pde, "pde", vec![laplacian()]),
        LossTerm::new("boundary", TermKind::Boundary, "boundary", vec![Expr::value(0) - Expr::data("g")]),
    ];
    Ok((sets, terms))
}

/// Peanut with a hole; Chebyshev (61, 61), 20000 interior and 3000 boundary points.
pub fn build_peanut(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::LaplacePeanut;
    let domain = peanut_domain();
    let field = square_field(&params.shape("u", &[61, 61])?)?;
    let harmonic = params.harmonic_boundary;
    let (sets, terms) = dirichlet_sets(id, params, &domain, (20_000, 3_000), |s| boundary_value(s, harmonic))?;
    Ok(finish(id, params, domain, field, sets, terms))
}

/// High-resolution peanut solution used as the reference for data assimilation and sweeps.
pub fn self_reference(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let n = params.reference_modes.unwrap_or(DEFAULT_REFERENCE_MODES);
    let ref_params = ProblemParams {
        seed: params.seed,
        modes: Some(n),
        harmonic_boundary: params.harmonic_boundary,
        cache_dir: params.cache_dir.clone(),
        ..Default::default()
    };
    let mut built = build_id(ProblemId::LaplacePeanut, &ref_params)?;
    let tag = format!("peanut-reference n={n} seed={} harmonic={}", params.seed, params.harmonic_boundary);
    let fields = cached_solution(&built, &tag)?;
    built.reference = fields.into_iter().next();
    Ok(built)
}

/// Peanut with interior samples in place of boundary data; Chebyshev (46, 46), 20000 interior points,
/// 379 observations drawn from the self-reference unless given.
pub fn build_data_assim(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::LaplaceDataAssim;
    let domain = peanut_domain();
    let field = square_field(&params.shape("u", &[46, 46])?)?;
    let (obs, reference) = match &params.observations {
        Some(o) => (o.clone(), None),
        None => {
            let reference = self_reference(params)?.reference.expect("reference solve returns a field");
            let n = params.count("data", DEFAULT_OBSERVATIONS)?;
            let points = domain.sample_interior(n, &mut stream(params, id, "observations"))?;
            let values = reference.evaluate(&points)?;
            (Observations { points, values }, Some(reference))
        }
    };
    if obs.points.len() != obs.values.len() || obs.points.is_empty() {
        return Err(ProblemError::param("observations", "need matching, non-empty points and values"));
    }
    let pde = domain.sample_interior(params.count("pde", 20_000)?, &mut stream(params, id, "pde"))?;
    let sets = vec![
        CollocationSet::new("pde", pde),
        CollocationSet::new("data", obs.points).with_data("u_obs", obs.values),
    ];
    let terms = vec![
        LossTerm::new("pde", TermKind::Pde, "pde", vec![laplacian()]),
        LossTerm::new("data", TermKind::Data, "data", vec![Expr::value(0) - Expr::data("u_obs")]),
    ];
    let mut built = finish(id, params, domain, field, sets, terms);
    built.reference = reference;
    Ok(built)
}

/// Irregular lake-like mask with an island, used when no mask is supplied.
pub fn default_mask(resolution: usize) -> RasterMask {
    RasterMask::from_fn(resolution, resolution, Extent::square(1.0), |x, y| {
        let th = y.atan2(x);
        let r = (x * x + y * y).sqrt();
        let outer = 0.78 + 0.1 * (3.0 * th).sin() + 0.06 * (5.0 * th + 0.4).cos();
        let island = ((x - 0.12).powi(2) + (y + 0.08).powi(2)).sqrt() < 0.18;
        r < outer && !island
    })
}

/// Laplace on a raster mask with `2 sin(theta) + cos(3 theta)` on every edge;
/// Chebyshev (101, 101), 35000 interior and 35000 boundary points.
pub fn build_mask(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::LaplaceMask;
    let mask = params.mask.clone().unwrap_or_else(|| default_mask(256));
    mask.validate()?;
    let domain = DomainSpec::new(Shape::RasterMask { mask });
    let field = square_field(&params.shape("u", &[101, 101])?)?;
    let (sets, terms) = dirichlet_sets(id, params, &domain, (35_000, 35_000), |s| outer_value(&s.point))?;
    Ok(finish(id, params, domain, field, sets, terms))
}

/// Points of an `n * n` grid over the bounding box that lie in the domain.
pub fn in_domain_grid(domain: &DomainSpec, n: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = domain.bounding_box();
    super::metrics::grid_2d((lo[0], hi[0]), (lo[1], hi[1]), n, n)
        .into_iter()
        .map(|p| p.to_vec())
        .filter(|p| domain.contains(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::stream_rng;
    use rand::Rng;

    #[test]
    fn harmonic_oracle_examples() {
        assert_eq!(oracle_laplace_harmonic(&[1.0, 0.0]), 1.0);
        for y in [-0.7, 0.0, 0.3, 2.0] {
            assert_eq!(oracle_laplace_harmonic(&[0.0, y]), 0.0);
        }
        let mut rng = stream_rng(1, "fd");
        let h = 1e-2;
        for _ in 0..20 {
            let (x, y) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let f = |a: f64, b: f64| oracle_laplace_harmonic(&[a, b]);
            let lap = (f(x + h, y) + f(x - h, y) + f(x, y + h) + f(x, y - h) - 4.0 * f(x, y)) / (h * h);
            assert!(lap.abs() < 1e-10, "{lap}");
        }
    }

    #[test]
    fn peanut_defaults_follow_table() {
        let b = build_peanut(&ProblemParams::default().with_points("pde", 50).with_points("boundary", 20)).unwrap();
        assert_eq!(b.spec.fields[0].spec.shape(), vec![61, 61]);
        let full = ProblemParams::default();
        assert_eq!(full.count("pde", 20_000).unwrap(), 20_000);
        assert_eq!(full.count("boundary", 3_000).unwrap(), 3_000);
        assert!(matches!(b.optimizer, crate::optimize::OptimizerConfig::Dogleg(_)));
        assert_eq!(b.spec.weighting, crate::residual::Weighting::Fixed);
        let c = b.compile().unwrap();
        assert!(c.is_affine());
        assert_eq!(c.n_residuals(), 70);
    }

    #[test]
    fn boundary_data_matches_tags() {
        let b = build_peanut(&ProblemParams::default().with_modes(3).with_points("pde", 10).with_points("boundary", 400))
            .unwrap();
        let set = &b.spec.sets[1];
        let g = &set.data[0].values;
        let mut holes = 0;
        for (p, v) in set.points.iter().zip(g) {
            let d = ((p[0] - HOLE.center[0]).powi(2) + (p[1] - HOLE.center[1]).powi(2)).sqrt();
            if (d - HOLE.radius).abs() < 1e-12 {
                holes += 1;
                assert_eq!(*v, INNER_VALUE);
            } else {
                assert!((v - outer_value(p)).abs() < 1e-15);
            }
        }
        assert!(holes > 0);
    }

    #[test]
    fn given_observations_skip_the_reference() {
        let obs = Observations { points: vec![vec![0.0, 0.0], vec![-0.5, 0.2]], values: vec![1.0, 2.0] };
        let params = ProblemParams { observations: Some(obs), ..ProblemParams::default().with_modes(4).with_points("pde", 30) };
        let b = build_data_assim(&params).unwrap();
        assert!(b.reference.is_none());
        assert_eq!(b.spec.terms[1].kind, TermKind::Data);
        assert_eq!(b.spec.sets[1].len(), 2);
    }

    #[test]
    fn default_mask_has_island_and_edges() {
        let m = default_mask(128);
        m.validate().unwrap();
        assert!(!m.contains(0.12, -0.08));
        assert!(m.contains(-0.4, 0.0));
        assert!(!m.contains(0.99, 0.99));
        let b = build_mask(&ProblemParams::default().with_modes(3).with_points("pde", 40).with_points("boundary", 40))
            .unwrap();
        assert!(matches!(b.optimizer, crate::optimize::OptimizerConfig::LevenbergMarquardt(_)));
    }
}
