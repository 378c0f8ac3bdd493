//! Irregular domains embedded in the basis hyperrectangle, collocation
//! sampling and outward normals.
//!
//! Sampled points list spatial coordinates first; when the domain carries a
//! time extent, `t` is appended as the last coordinate.

pub mod raster;

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use raster::{Extent, GrayRaster, RasterMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rejection sampling accepted {accepted} of {trials} trials; domain is degenerate")]
    DegenerateDomain { accepted: usize, trials: usize },
    #[error("domain has no usable boundary: {0}")]
    DegenerateBoundary(String),
    #[error("invalid domain: {0}")]
    InvalidSpec(String),
    #[error("image error: {0}")]
    Image(String),
}

const MAX_TRIALS: usize = 10_000_000;
const MIN_ACCEPTANCE: f64 = 1e-3;

/// Deterministic generator for one named sampling stream.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// `r(theta)` of the peanut-shaped region.
pub fn peanut_radius(theta: f64) -> f64 {
    let c = (2.0 * theta).cos();
    (0.45 * c + 0.55) / (0.375 * c + 0.625).powf(1.5)
}

/// `dr/dtheta` of [`peanut_radius`].
pub fn peanut_radius_derivative(theta: f64) -> f64 {
    let c = (2.0 * theta).cos();
    let n = 0.45 * c + 0.55;
    let d = 0.375 * c + 0.625;
    let dr_dc = 0.45 / d.powf(1.5) - 1.5 * 0.375 * n / d.powf(2.5);
    dr_dc * (-2.0 * (2.0 * theta).sin())
}

/// Closed curve given in polar form about the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "curve", rename_all = "kebab-case")]
pub enum PolarCurve {
    Peanut,
    Circle { radius: f64 },
}

impl PolarCurve {
    pub fn radius(&self, theta: f64) -> f64 {
        match self {
            PolarCurve::Peanut => peanut_radius(theta),
            PolarCurve::Circle { radius } => *radius,
        }
    }

    pub fn radius_derivative(&self, theta: f64) -> f64 {
        match self {
            PolarCurve::Peanut => peanut_radius_derivative(theta),
            PolarCurve::Circle { .. } => 0.0,
        }
    }

    /// Point and outward unit normal at polar angle `theta`.
    pub fn point_normal(&self, theta: f64) -> ([f64; 2], [f64; 2]) {
        let (r, dr) = (self.radius(theta), self.radius_derivative(theta));
        let (s, c) = theta.sin_cos();
        let nx = r * c + dr * s;
        let ny = r * s - dr * c;
        let norm = nx.hypot(ny);
        ([r * c, r * s], [nx / norm, ny / norm])
    }

    /// Enclosed area, `(1/2) * integral of r^2`.
    pub fn area(&self) -> f64 {
        let n = 4096;
        let h = 2.0 * PI / n as f64;
        0.5 * h * (0..n).map(|i| self.radius(i as f64 * h).powi(2)).sum::<f64>()
    }

    pub fn perimeter(&self) -> f64 {
        let n = 4096;
        let h = 2.0 * PI / n as f64;
        h * (0..n)
            .map(|i| {
                let t = i as f64 * h;
                self.radius(t).hypot(self.radius_derivative(t))
            })
            .sum::<f64>()
    }

    pub fn max_radius(&self) -> f64 {
        match self {
            // Attained where cos(2 theta) = -1/3.
            PolarCurve::Peanut => 0.8 * std::f64::consts::SQRT_2,
            PolarCurve::Circle { radius } => *radius,
        }
    }

    /// Half-widths of the axis-aligned bounding box, `(max |x|, max |y|)`.
    pub fn half_extent(&self) -> (f64, f64) {
        match self {
            PolarCurve::Peanut => (1.0, 0.993_808_0),
            PolarCurve::Circle { radius } => (*radius, *radius),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Spatial shape of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Hyperrectangle { lo: Vec<f64>, hi: Vec<f64> },
    PolarRegion { outer: PolarCurve, holes: Vec<Hole> },
    Disk { center: [f64; 2], radius: f64 },
    RasterMask { mask: RasterMask },
    SphereSurface { radius: f64 },
}

/// Which boundary component a sample lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryTag {
    Outer,
    Hole(usize),
    Mask,
    Face(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySample {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<[f64; 2]>,
}

impl DomainSpec {
    pub fn new(shape: Shape) -> Self {
        DomainSpec { shape, time: None }
    }

    pub fn with_time(mut self, t0: f64, t1: f64) -> Self {
        self.time = Some([t0, t1]);
        self
    }

    /// The peanut region, optionally with holes.
    pub fn peanut(holes: Vec<Hole>) -> Self {
        DomainSpec::new(Shape::PolarRegion { outer: PolarCurve::Peanut, holes })
    }

    pub fn disk(center: [f64; 2], radius: f64) -> Self {
        DomainSpec::new(Shape::Disk { center, radius })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match &self.shape {
            Shape::Hyperrectangle { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(GeometryError::InvalidSpec("hyperrectangle needs lo < hi in every axis".into()));
                }
            }
            Shape::PolarRegion { outer, holes } => {
                if let PolarCurve::Circle { radius } = outer {
                    if !(*radius > 0.0) {
                        return Err(GeometryError::InvalidSpec("circle radius must be positive".into()));
                    }
                }
                for h in holes {
                    if !(h.radius > 0.0) {
                        return Err(GeometryError::InvalidSpec("hole radius must be positive".into()));
                    }
                    // The hole must sit strictly inside the outer curve.
                    let inside = (0..360).all(|k| {
                        let a = k as f64 * PI / 180.0;
                        let (x, y) = (h.center[0] + h.radius * a.cos(), h.center[1] + h.radius * a.sin());
                        x.hypot(y) < outer.radius(y.atan2(x))
                    });
                    if !inside {
                        return Err(GeometryError::InvalidSpec(format!(
                            "hole at {:?} with radius {} crosses the outer boundary",
                            h.center, h.radius
                        )));
                    }
                }
            }
            Shape::Disk { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(GeometryError::InvalidSpec("disk radius must be positive".into()));
                }
            }
            Shape::RasterMask { mask } => mask.validate()?,
            Shape::SphereSurface { radius } => {
                if !(*radius > 0.0) {
                    return Err(GeometryError::InvalidSpec("sphere radius must be positive".into()));
                }
            }
        }
        if let Some([t0, t1]) = self.time {
            if !(t0 < t1) {
                return Err(GeometryError::InvalidSpec(format!("time extent [{t0}, {t1}] is empty")));
            }
        }
        Ok(())
    }

    pub fn spatial_dim(&self) -> usize {
        match &self.shape {
            Shape::Hyperrectangle { lo, .. } => lo.len(),
            Shape::SphereSurface { .. } => 3,
            _ => 2,
        }
    }

    pub fn dim(&self) -> usize {
        self.spatial_dim() + usize::from(self.time.is_some())
    }

    /// Axis-aligned box containing the spatial region.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Hyperrectangle { lo, hi } => (lo.clone(), hi.clone()),
            Shape::PolarRegion { outer, .. } => {
                let (hx, hy) = outer.half_extent();
                (vec![-hx, -hy], vec![hx, hy])
            }
            Shape::Disk { center, radius } => (
                vec![center[0] - radius, center[1] - radius],
                vec![center[0] + radius, center[1] + radius],
            ),
            Shape::RasterMask { mask } => {
                let e = mask.extent;
                (vec![e.x_lo, e.y_lo], vec![e.x_hi, e.y_hi])
            }
            Shape::SphereSurface { radius } => (vec![-radius; 3], vec![*radius; 3]),
        }
    }

    /// Spatial measure (area, volume, or surface area).
    pub fn measure(&self) -> f64 {
        match &self.shape {
            Shape::Hyperrectangle { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Shape::PolarRegion { outer, holes } => {
                outer.area() - holes.iter().map(|h| PI * h.radius * h.radius).sum::<f64>()
            }
            Shape::Disk { radius, .. } => PI * radius * radius,
            Shape::RasterMask { mask } => mask.area(),
            Shape::SphereSurface { radius } => 4.0 * PI * radius * radius,
        }
    }

    /// Membership of the spatial part of `point` (and of `t`, if timed).
    pub fn contains(&self, point: &[f64]) -> bool {
        let sd = self.spatial_dim();
        if point.len() < sd {
            return false;
        }
        if let (Some([t0, t1]), Some(&t)) = (self.time, point.get(sd)) {
            if !(t >= t0 && t <= t1) {
                return false;
            }
        }
        match &self.shape {
            Shape::Hyperrectangle { lo, hi } => {
                point.iter().zip(lo.iter().zip(hi)).all(|(x, (a, b))| *x >= *a && *x <= *b)
            }
            Shape::PolarRegion { outer, holes } => {
                let (x, y) = (point[0], point[1]);
                x.hypot(y) < outer.radius(y.atan2(x))
                    && holes
                        .iter()
                        .all(|h| (x - h.center[0]).hypot(y - h.center[1]) > h.radius)
            }
            Shape::Disk { center, radius } => {
                (point[0] - center[0]).hypot(point[1] - center[1]) < *radius
            }
            Shape::RasterMask { mask } => mask.contains(point[0], point[1]),
            Shape::SphereSurface { radius } => {
                let r = (point[0] * point[0] + point[1] * point[1] + point[2] * point[2]).sqrt();
                (r - radius).abs() < 1e-9
            }
        }
    }

    fn push_time<R: Rng + ?Sized>(&self, p: &mut Vec<f64>, rng: &mut R) {
        if let Some([t0, t1]) = self.time {
            p.push(t0 + (t1 - t0) * rng.gen::<f64>());
        }
    }

    /// Uniform samples of the spatial region, with uniform independent `t`.
    pub fn sample_interior<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>, GeometryError> {
        let spatial = self.sample_spatial(n, rng)?;
        Ok(spatial
            .into_iter()
            .map(|mut p| {
                self.push_time(&mut p, rng);
                p
            })
            .collect())
    }

    /// Interior samples at `t = t0` (spatial only if untimed).
    pub fn sample_initial<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>, GeometryError> {
        let mut pts = self.sample_spatial(n, rng)?;
        if let Some([t0, _]) = self.time {
            for p in pts.iter_mut() {
                p.push(t0);
            }
        }
        Ok(pts)
    }

    fn sample_spatial<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>, GeometryError> {
        match &self.shape {
            Shape::SphereSurface { radius } => Ok(sample_sphere_surface(*radius, n, rng)),
            Shape::RasterMask { mask } => {
                let cells = mask.inside_cells();
                if cells.is_empty() {
                    return Err(GeometryError::DegenerateDomain { accepted: 0, trials: 0 });
                }
                let picks: Vec<usize> = if n <= cells.len() {
                    rand::seq::index::sample(rng, cells.len(), n).into_vec()
                } else {
                    (0..n).map(|_| rng.gen_range(0..cells.len())).collect()
                };
                Ok(picks
                    .into_iter()
                    .map(|k| {
                        let (x, y) = mask.cell_center(cells[k].0, cells[k].1);
                        vec![x, y]
                    })
                    .collect())
            }
            _ => {
                let (lo, hi) = self.bounding_box();
                let untimed = DomainSpec { shape: self.shape.clone(), time: None };
                let mut out = Vec::with_capacity(n);
                let mut trials = 0usize;
                while out.len() < n {
                    trials += 1;
                    let p: Vec<f64> =
                        lo.iter().zip(&hi).map(|(a, b)| a + (b - a) * rng.gen::<f64>()).collect();
                    if untimed.contains(&p) {
                        out.push(p);
                    }
                    if trials >= MAX_TRIALS && (out.len() as f64) < MIN_ACCEPTANCE * trials as f64 {
                        return Err(GeometryError::DegenerateDomain { accepted: out.len(), trials });
                    }
                }
                Ok(out)
            }
        }
    }

    /// Boundary samples with outward unit normals (spatial components only).
    pub fn sample_boundary<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<BoundarySample>, GeometryError> {
        let mut out = Vec::with_capacity(n);
        match &self.shape {
            Shape::SphereSurface { .. } => {
                return Err(GeometryError::DegenerateBoundary("a sphere surface has no boundary".into()))
            }
            Shape::PolarRegion { outer, holes } => {
                // Components are chosen in proportion to their perimeter.
                let mut weights = vec![outer.perimeter()];
                weights.extend(holes.iter().map(|h| 2.0 * PI * h.radius));
                let total: f64 = weights.iter().sum();
                for _ in 0..n {
                    let mut u = rng.gen::<f64>() * total;
                    let mut comp = 0;
                    while comp + 1 < weights.len() && u >= weights[comp] {
                        u -= weights[comp];
                        comp += 1;
                    }
                    let theta = 2.0 * PI * rng.gen::<f64>();
                    let s = if comp == 0 {
                        let (p, nrm) = outer.point_normal(theta);
                        BoundarySample { point: p.to_vec(), normal: nrm.to_vec(), tag: BoundaryTag::Outer }
                    } else {
                        let h = &holes[comp - 1];
                        let (s, c) = theta.sin_cos();
                        BoundarySample {
                            point: vec![h.center[0] + h.radius * c, h.center[1] + h.radius * s],
                            normal: vec![-c, -s],
                            tag: BoundaryTag::Hole(comp - 1),
                        }
                    };
                    out.push(s);
                }
            }
            Shape::Disk { center, radius } => {
                for _ in 0..n {
                    let theta = 2.0 * PI * rng.gen::<f64>();
                    let (s, c) = theta.sin_cos();
                    out.push(BoundarySample {
                        point: vec![center[0] + radius * c, center[1] + radius * s],
                        normal: vec![c, s],
                        tag: BoundaryTag::Outer,
                    });
                }
            }
            Shape::RasterMask { mask } => {
                let edges = mask.edge_cells();
                if edges.is_empty() {
                    return Err(GeometryError::DegenerateBoundary("mask has no edge cells".into()));
                }
                for _ in 0..n {
                    let ((i, j), nrm) = edges[rng.gen_range(0..edges.len())];
                    let (x, y) = mask.cell_center(i, j);
                    out.push(BoundarySample { point: vec![x, y], normal: nrm.to_vec(), tag: BoundaryTag::Mask });
                }
            }
            Shape::Hyperrectangle { lo, hi } => {
                let d = lo.len();
                let widths: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
                let face_measure = |axis: usize| -> f64 {
                    (0..d).filter(|&k| k != axis).map(|k| widths[k]).product()
                };
                let weights: Vec<f64> = (0..2 * d).map(|f| face_measure(f / 2)).collect();
                let total: f64 = weights.iter().sum();
                for _ in 0..n {
                    let mut u = rng.gen::<f64>() * total;
                    let mut face = 0;
                    while face + 1 < weights.len() && u >= weights[face] {
                        u -= weights[face];
                        face += 1;
                    }
                    let axis = face / 2;
                    let upper = face % 2 == 1;
                    let mut p: Vec<f64> =
                        (0..d).map(|k| lo[k] + widths[k] * rng.gen::<f64>()).collect();
                    p[axis] = if upper { hi[axis] } else { lo[axis] };
                    let mut nrm = vec![0.0; d];
                    nrm[axis] = if upper { 1.0 } else { -1.0 };
                    out.push(BoundarySample { point: p, normal: nrm, tag: BoundaryTag::Face(face) });
                }
            }
        }
        for s in out.iter_mut() {
            self.push_time(&mut s.point, rng);
        }
        Ok(out)
    }
}

/// Uniform points on a sphere of the given radius centred at the origin.
pub fn sample_sphere_surface<R: Rng + ?Sized>(radius: f64, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let g: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if norm > 1e-12 {
                break g.iter().map(|v| radius * v / norm).collect();
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_domain() -> DomainSpec {
        DomainSpec::peanut(vec![Hole { center: [0.3, 0.1], radius: 0.15 }])
    }

    #[test]
    fn peanut_radius_examples() {
        assert!((peanut_radius(0.0) - 1.0).abs() < 1e-15);
        assert!((peanut_radius(PI / 2.0) - 0.8).abs() < 1e-14);
        let mut rng = stream_rng(1, "theta");
        for _ in 0..50 {
            let t: f64 = rng.gen_range(-10.0..10.0);
            assert!((peanut_radius(t) - peanut_radius(PI - t)).abs() < 1e-14);
            assert!((peanut_radius(t) - peanut_radius(-t)).abs() < 1e-14);
            assert!(peanut_radius(t) > 0.0);
        }
    }

    #[test]
    fn peanut_bounding_box_is_tight() {
        let (mut mr, mut mx, mut my) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..200_000 {
            let t = k as f64 * 2.0 * PI / 200_000.0;
            let r = peanut_radius(t);
            mr = mr.max(r);
            mx = mx.max((r * t.cos()).abs());
            my = my.max((r * t.sin()).abs());
        }
        let (hx, hy) = PolarCurve::Peanut.half_extent();
        assert!(mr <= PolarCurve::Peanut.max_radius() + 1e-12 && mr > PolarCurve::Peanut.max_radius() - 1e-8);
        assert!(mx <= hx + 1e-12 && hx - mx < 1e-6);
        assert!(my <= hy + 1e-9 && hy - my < 1e-6);
    }

    #[test]
    fn peanut_derivative_matches_finite_difference() {
        let h = 1e-6;
        for k in 0..40 {
            let t = k as f64 * 0.157;
            let fd = (peanut_radius(t + h) - peanut_radius(t - h)) / (2.0 * h);
            assert!((peanut_radius_derivative(t) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn membership_examples() {
        let d = laplace_domain();
        assert!(!d.contains(&[0.3, 0.1]));
        assert!(d.contains(&[0.0, 0.0]));
        // The radius peaks at 0.8 * sqrt(2) off-axis, but |x| never exceeds 1.
        assert!(d.contains(&[0.78, 0.78]));
        assert!(!d.contains(&[0.81, 0.81]));
        assert!(!d.contains(&[1.0 + 1e-9, 0.0]));
        assert!(!d.contains(&[0.0, 0.81]));
    }

    #[test]
    fn disk_sample_mean_near_origin() {
        let d = DomainSpec::disk([0.0, 0.0], 1.0);
        let pts = d.sample_interior(100_000, &mut stream_rng(3, "disk")).unwrap();
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
        assert!(mx.abs() < 0.01 && my.abs() < 0.01);
        assert!(pts.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn peanut_area_from_acceptance() {
        let d = laplace_domain();
        let mut rng = stream_rng(9, "area");
        let trials = 400_000;
        let hits = (0..trials)
            .filter(|_| d.contains(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .count();
        let estimate = 4.0 * hits as f64 / trials as f64;
        assert!((estimate - d.measure()).abs() < 0.01 * d.measure());
    }

    #[test]
    fn boundary_samples_and_normals() {
        let c = DomainSpec::disk([0.0, 0.0], 1.0);
        let b = c.sample_boundary(100, &mut stream_rng(0, "b")).unwrap();
        for s in &b {
            assert!((s.point[0] - s.normal[0]).abs() < 1e-15 && (s.point[1] - s.normal[1]).abs() < 1e-15);
        }
        let (p, n) = PolarCurve::Peanut.point_normal(0.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
        assert!(n[0] > 0.0 && n[1].abs() < 1e-12);

        let d = laplace_domain();
        let b = d.sample_boundary(2000, &mut stream_rng(0, "b")).unwrap();
        let mut holes = 0;
        for s in &b {
            assert!((s.normal[0].hypot(s.normal[1]) - 1.0).abs() < 1e-10);
            match s.tag {
                BoundaryTag::Outer => {
                    let r = s.point[0].hypot(s.point[1]);
                    assert!((r - peanut_radius(s.point[1].atan2(s.point[0]))).abs() < 1e-10);
                }
                BoundaryTag::Hole(_) => {
                    holes += 1;
                    let to_center = [0.3 - s.point[0], 0.1 - s.point[1]];
                    assert!(to_center[0] * s.normal[0] + to_center[1] * s.normal[1] > 0.0);
                }
                _ => unreachable!(),
            }
        }
        assert!(holes > 100 && holes < 600);
    }

    #[test]
    fn sphere_samples() {
        let pts = sample_sphere_surface(1.0, 100_000, &mut stream_rng(5, "sphere"));
        let mut mean = [0.0; 3];
        let mut cap = 0usize;
        for p in &pts {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            for k in 0..3 {
                mean[k] += p[k] / pts.len() as f64;
            }
            if p[2] > 0.5 {
                cap += 1;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.02));
        assert!((cap as f64 / pts.len() as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn timed_domains_append_t() {
        let d = DomainSpec::peanut(vec![]).with_time(0.0, 2.0);
        let pts = d.sample_interior(50, &mut stream_rng(1, "pde")).unwrap();
        assert!(pts.iter().all(|p| p.len() == 3 && (0.0..=2.0).contains(&p[2]) && d.contains(p)));
        let init = d.sample_initial(20, &mut stream_rng(1, "ic")).unwrap();
        assert!(init.iter().all(|p| p[2] == 0.0));
        let b = d.sample_boundary(20, &mut stream_rng(1, "bc")).unwrap();
        assert!(b.iter().all(|s| s.point.len() == 3 && s.normal.len() == 2));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream_rng(7, "pde").gen()).collect();
        let b: Vec<u64> = (0..4).map(|_| stream_rng(7, "pde").gen()).collect();
        assert_eq!(a, b);
        let mut r1 = stream_rng(7, "pde");
        let mut r2 = stream_rng(7, "boundary");
        assert_ne!(r1.gen::<u64>(), r2.gen::<u64>());
    }

    #[test]
    fn raster_domain_sampling() {
        let mask = RasterMask::from_fn(64, 64, Extent::square(1.0), |x, y| x * x + y * y < 0.5);
        let d = DomainSpec::new(Shape::RasterMask { mask });
        let pts = d.sample_interior(500, &mut stream_rng(2, "pde")).unwrap();
        assert!(pts.iter().all(|p| d.contains(p)));
        let b = d.sample_boundary(100, &mut stream_rng(2, "bc")).unwrap();
        assert!(b.iter().all(|s| (s.normal[0] * s.point[0] + s.normal[1] * s.point[1]) > 0.0));
        let empty = RasterMask::from_fn(8, 8, Extent::square(1.0), |_, _| false);
        let d = DomainSpec::new(Shape::RasterMask { mask: empty });
        assert!(d.sample_boundary(1, &mut stream_rng(2, "bc")).is_err());
    }

    #[test]
    fn invalid_holes_are_rejected() {
        let d = DomainSpec::peanut(vec![Hole { center: [0.9, 0.0], radius: 0.2 }]);
        assert!(d.validate().is_err());
        assert!(laplace_domain().validate().is_ok());
    }

    #[test]
    fn json_round_trip() {
        let d = laplace_domain().with_time(0.0, 1.0);
        let s = serde_json::to_string(&d).unwrap();
        let back: DomainSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(d, back);
    }
}
