//! Allen-Cahn and nonlinear Schrodinger benchmarks with a split-step Fourier oracle.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{
    axes, basis, default_optimizer, default_weighting, stream, tensor, BuiltProblem, ProblemError, ProblemId,
    ProblemParams, CONSTANTS,
};
use crate::basis::BasisFamily;
use crate::field::{CoefficientField, OutputTransform};
use crate::geometry::{DomainSpec, Shape};
use crate::residual::{CollocationSet, Expr, FieldDecl, LossTerm, ProblemSpec, TermKind};

pub const NLS_HALF_WIDTH: f64 = 5.0;
pub const ORACLE_DT: f64 = 1e-4;
pub const RICHARDSON_TOLERANCE: f64 = 1e-6;

pub fn allen_cahn_initial(x: f64) -> f64 {
    x * x * (PI * x).cos()
}

pub fn nls_initial(x: f64) -> f64 {
    2.0 / x.cosh()
}

fn finish(id: ProblemId, params: &ProblemParams, spec: ProblemSpec, domain: DomainSpec, n_fields: usize) -> BuiltProblem {
    BuiltProblem {
        id,
        spec,
        domain,
        optimizer: default_optimizer(id),
        axes: vec![axes(&["x", "t"]); n_fields],
        scales: Default::default(),
        reference: None,
        params: params.clone(),
    }
}

fn slab(lo: f64, hi: f64, t_end: f64) -> DomainSpec {
    DomainSpec::new(Shape::Hyperrectangle { lo: vec![lo], hi: vec![hi] }).with_time(0.0, t_end)
}

/// `u_t - 1e-4 u_xx + 5 u^3 - 5 u = 0` on `[-1, 1] x [0, T]`; cosine in x, Legendre in t,
/// (201, 11) modes, 30000 interior and 1000 initial points.
pub fn build_allen_cahn(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::AllenCahn;
    let t_end = ProblemParams::positive("t_end", params.t_end, 1.0)?;
    let n = params.shape("u", &[201, 11])?;
    let spec = tensor(vec![
        basis(BasisFamily::CosineOnly, n[0], -1.0, 1.0)?,
        basis(BasisFamily::Legendre, n[1], 0.0, t_end)?,
    ])?;
    let domain = slab(-1.0, 1.0, t_end);
    let pde = domain.sample_interior(params.count("pde", 30_000)?, &mut stream(params, id, "pde"))?;
    let init = domain.sample_initial(params.count("initial", 1_000)?, &mut stream(params, id, "initial"))?;
    let u = || Expr::jet(0, [0, 0]);
    let (eps, k) = (CONSTANTS.ac_diffusion, CONSTANTS.ac_reaction);
    let residual = Expr::jet(0, [0, 1]) - eps * Expr::jet(0, [2, 0]) + k * u().powi(3) - k * u();
    let x = Expr::coord(0);
    let u0 = x.clone().square() * (PI * x).cos();
    let spec = ProblemSpec {
        fields: vec![FieldDecl::new("u", spec, OutputTransform::Identity)],
        sets: vec![CollocationSet::new("pde", pde), CollocationSet::new("initial", init)],
        terms: vec![
            LossTerm::new("pde", TermKind::Pde, "pde", vec![residual]),
            LossTerm::new("initial", TermKind::Initial, "initial", vec![u() - u0]),
        ],
        weighting: default_weighting(id),
    };
    Ok(finish(id, params, spec, domain, 1))
}

/// `i g_t + 0.5 g_xx + |g|^2 g = 0` with `g = u + i v` on `[-5, 5] x [0, pi/2]`;
/// cosine in x, Chebyshev in t, (46, 46) modes per part, 20000 interior and 150 initial points.
pub fn build_nls(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::Nls;
    let t_end = ProblemParams::positive("t_end", params.t_end, PI / 2.0)?;
    let mut fields = Vec::new();
    for name in ["u", "v"] {
        let n = params.shape(name, &[46, 46])?;
        let spec = tensor(vec![
            basis(BasisFamily::CosineOnly, n[0], -NLS_HALF_WIDTH, NLS_HALF_WIDTH)?,
            basis(BasisFamily::Chebyshev, n[1], 0.0, t_end)?,
        ])?;
        fields.push(FieldDecl::new(name, spec, OutputTransform::Identity));
    }
    let domain = slab(-NLS_HALF_WIDTH, NLS_HALF_WIDTH, t_end);
    let pde = domain.sample_interior(params.count("pde", 20_000)?, &mut stream(params, id, "pde"))?;
    let init = domain.sample_initial(params.count("initial", 150)?, &mut stream(params, id, "initial"))?;
    let g0: Vec<f64> = init.iter().map(|p| nls_initial(p[0])).collect();
    let a = CONSTANTS.nls_dispersion;
    let (u, v) = (|| Expr::value(0), || Expr::value(1));
    let mod2 = || u().square() + v().square();
    let real = -Expr::jet(1, [0, 1]) + a * Expr::jet(0, [2, 0]) + mod2() * u();
    let imag = Expr::jet(0, [0, 1]) + a * Expr::jet(1, [2, 0]) + mod2() * v();
    let spec = ProblemSpec {
        fields,
        sets: vec![CollocationSet::new("pde", pde), CollocationSet::new("initial", init).with_data("g0", g0)],
        terms: vec![
            LossTerm::new("pde", TermKind::Pde, "pde", vec![real, imag]),
            LossTerm::new("initial", TermKind::Initial, "initial", vec![u() - Expr::data("g0"), v()]),
        ],
        weighting: default_weighting(id),
    };
    Ok(finish(id, params, spec, domain, 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stiff1d {
    AllenCahn,
    Nls,
}

/// Reference solution sampled on `x` (periodic grid) at each time in `t`; `re[k][j]` is at `(x[j], t[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl OracleGrid {
    pub fn modulus(&self, k: usize) -> Vec<f64> {
        self.re[k].iter().zip(&self.im[k]).map(|(a, b)| a.hypot(*b)).collect()
    }

    /// Discrete `integral |g|^2 dx` at time index `k`.
    pub fn mass(&self, k: usize) -> f64 {
        let dx = self.x[1] - self.x[0];
        dx * self.re[k].iter().zip(&self.im[k]).map(|(a, b)| a * a + b * b).sum::<f64>()
    }
}

struct Stepper {
    kind: Stiff1d,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    k2: Vec<f64>,
}

impl Stepper {
    fn new(kind: Stiff1d, m: usize, period: f64) -> Self {
        let mut planner = FftPlanner::new();
        let k2 = (0..m)
            .map(|j| {
                let f = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
                (2.0 * PI * f / period).powi(2)
            })
            .collect();
        Stepper { kind, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m), k2 }
    }

    fn nonlinear(&self, g: &mut [Complex64], h: f64) {
        match self.kind {
            Stiff1d::AllenCahn => {
                let r = CONSTANTS.ac_reaction;
                let e = (2.0 * r * h).exp();
                for z in g.iter_mut() {
                    let u = z.re;
                    z.re = u * (r * h).exp() / (1.0 + u * u * (e - 1.0)).sqrt();
                    z.im = 0.0;
                }
            }
            Stiff1d::Nls => {
                for z in g.iter_mut() {
                    *z *= Complex64::from_polar(1.0, z.norm_sqr() * h);
                }
            }
        }
    }

    fn linear(&self, g: &mut [Complex64], h: f64) {
        self.fwd.process(g);
        let scale = 1.0 / g.len() as f64;
        for (z, k2) in g.iter_mut().zip(&self.k2) {
            let factor = match self.kind {
                Stiff1d::AllenCahn => Complex64::new((-CONSTANTS.ac_diffusion * k2 * h).exp(), 0.0),
                Stiff1d::Nls => Complex64::from_polar(1.0, -CONSTANTS.nls_dispersion * k2 * h),
            };
            *z *= factor * scale;
        }
        self.inv.process(g);
    }

    fn strang(&self, g: &mut [Complex64], h: f64) {
        self.nonlinear(g, 0.5 * h);
        self.linear(g, h);
        self.nonlinear(g, 0.5 * h);
    }

    /// Fourth-order triple-jump composition of Strang steps.
    fn step(&self, g: &mut [Complex64], h: f64) {
        let w1 = 1.0 / (2.0 - 2f64.cbrt());
        let w0 = 1.0 - 2.0 * w1;
        self.strang(g, w1 * h);
        self.strang(g, w0 * h);
        self.strang(g, w1 * h);
    }
}

fn integrate(kind: Stiff1d, x: &[f64], period: f64, t_grid: &[f64], dt_max: f64) -> Vec<Vec<Complex64>> {
    let stepper = Stepper::new(kind, x.len(), period);
    let mut g: Vec<Complex64> = x
        .iter()
        .map(|&x| match kind {
            Stiff1d::AllenCahn => Complex64::new(allen_cahn_initial(x), 0.0),
            Stiff1d::Nls => Complex64::new(nls_initial(x), 0.0),
        })
        .collect();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &tk in t_grid {
        let span = tk - t;
        if span > 0.0 {
            let steps = (span / dt_max).ceil() as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                stepper.step(&mut g, h);
            }
        }
        t = tk;
        out.push(g.clone());
    }
    out
}

/// Split-step Fourier reference on a periodic grid of `resolution` points, with the
/// time step halved once to confirm convergence.
pub fn oracle_timestep_1d(kind: Stiff1d, resolution: usize, t_grid: &[f64]) -> Result<OracleGrid, ProblemError> {
    if resolution < 256 || !resolution.is_power_of_two() {
        return Err(ProblemError::param("resolution", "must be a power of two >= 256"));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(ProblemError::param("t_grid", "times must be finite, non-negative and sorted"));
    }
    let (lo, period) = match kind {
        Stiff1d::AllenCahn => (-1.0, 2.0),
        Stiff1d::Nls => (-NLS_HALF_WIDTH, 2.0 * NLS_HALF_WIDTH),
    };
    let x: Vec<f64> = (0..resolution).map(|j| lo + period * j as f64 / resolution as f64).collect();
    let coarse = integrate(kind, &x, period, t_grid, ORACLE_DT);
    let fine = integrate(kind, &x, period, t_grid, 0.5 * ORACLE_DT);
    let diff = coarse
        .iter()
        .zip(&fine)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm()))
        .fold(0.0_f64, f64::max);
    if !(diff < RICHARDSON_TOLERANCE) {
        return Err(ProblemError::OracleResolution(format!(
            "halving the time step changed the solution by {diff:.3e}"
        )));
    }
    Ok(OracleGrid {
        x,
        t: t_grid.to_vec(),
        re: fine.iter().map(|g| g.iter().map(|z| z.re).collect()).collect(),
        im: fine.iter().map(|g| g.iter().map(|z| z.im).collect()).collect(),
    })
}

/// Cached variant of [`oracle_timestep_1d`].
pub fn oracle_cached(
    kind: Stiff1d,
    resolution: usize,
    t_grid: &[f64],
    cache_dir: Option<&std::path::PathBuf>,
) -> Result<OracleGrid, ProblemError> {
    let key = format!("{kind:?} {resolution} {:?} {ORACLE_DT:e}", t_grid);
    let name = format!("oracle-{kind:?}-{}.json", super::cache_key(&key)).to_lowercase();
    let text = super::cached_text(cache_dir, &name, || {
        let grid = oracle_timestep_1d(kind, resolution, t_grid)?;
        Ok(serde_json::to_string(&grid).expect("grid serializes"))
    })?;
    serde_json::from_str(&text).map_err(|e| ProblemError::OracleResolution(format!("corrupt cache entry: {e}")))
}

/// `n` equally spaced times on `[0, t_end]`.
pub fn time_grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t_end * k as f64 / (n - 1).max(1) as f64).collect()
}

/// `(L2, Linf)` of the solved fields against the oracle on its full grid.
/// Allen-Cahn compares `u`; NLS compares `|g| = sqrt(u^2 + v^2)`.
pub fn compare(kind: Stiff1d, fields: &[CoefficientField], oracle: &OracleGrid) -> Result<(f64, f64), ProblemError> {
    let pts: Vec<Vec<f64>> =
        oracle.t.iter().flat_map(|&t| oracle.x.iter().map(move |&x| vec![x, t])).collect();
    let (model, reference): (Vec<f64>, Vec<f64>) = match kind {
        Stiff1d::AllenCahn => {
            let u = fields[0].evaluate(&pts)?;
            (u, oracle.re.concat())
        }
        Stiff1d::Nls => {
            let u = fields[0].evaluate(&pts)?;
            let v = fields[1].evaluate(&pts)?;
            let m = u.iter().zip(&v).map(|(a, b)| a.hypot(*b)).collect();
            let r = (0..oracle.t.len()).flat_map(|k| oracle.modulus(k)).collect();
            (m, r)
        }
    };
    Ok(super::error_metrics(&model, &reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allen_cahn_oracle_properties() {
        let t = time_grid(1.0, 5);
        let g = oracle_timestep_1d(Stiff1d::AllenCahn, 256, &t).unwrap();
        for (j, &x) in g.x.iter().enumerate() {
            assert_eq!(g.re[0][j], allen_cahn_initial(x));
        }
        for row in &g.re {
            assert!(row.iter().all(|v| v.abs() <= 1.05));
        }
        // even in x: u(-x) = u(x) on the symmetric grid, up to roundoff from ~10^4 FFT substeps
        let m = g.x.len();
        for j in 1..m / 2 {
            let d = (g.re[4][j] - g.re[4][m - j]).abs();
            assert!(d < 1e-8, "{j} {d:e}");
        }
    }

    #[test]
    fn nls_oracle_conserves_mass() {
        let t = time_grid(PI / 2.0, 9);
        let g = oracle_timestep_1d(Stiff1d::Nls, 256, &t).unwrap();
        let m0 = g.mass(0);
        for k in 0..t.len() {
            assert!((g.mass(k) - m0).abs() < 1e-8 * m0.max(1.0), "{} vs {m0}", g.mass(k));
        }
        assert!((g.modulus(0)[128] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_bad_grids() {
        assert!(oracle_timestep_1d(Stiff1d::Nls, 100, &[0.0]).is_err());
        assert!(oracle_timestep_1d(Stiff1d::Nls, 128, &[0.0]).is_err());
        assert!(oracle_timestep_1d(Stiff1d::AllenCahn, 256, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn builders_follow_table_defaults() {
        let small = ProblemParams::default().with_points("pde", 20).with_points("initial", 5);
        let ac = build_allen_cahn(&small).unwrap();
        assert_eq!(ac.spec.fields[0].spec.shape(), vec![201, 11]);
        assert_eq!(ac.spec.fields[0].spec.dims[0].family, BasisFamily::CosineOnly);
        assert_eq!(ac.spec.fields[0].spec.dims[1].family, BasisFamily::Legendre);
        assert!(matches!(ac.optimizer, crate::optimize::OptimizerConfig::Dogleg(_)));
        let nls = build_nls(&small).unwrap();
        assert_eq!(nls.spec.fields.len(), 2);
        assert_eq!(nls.spec.fields[1].spec.shape(), vec![46, 46]);
        assert_eq!(nls.spec.terms[0].residuals.len(), 2);
    }

    #[test]
    fn exact_initial_condition_zeroes_the_initial_term() {
        // u = x^2 cos(pi x) is not in the cosine basis, but the initial residual must vanish
        // where the field matches it; check the expression against the closed form directly.
        let b = build_allen_cahn(&ProblemParams::default().with_modes(4).with_points("pde", 3).with_points("initial", 7))
            .unwrap();
        let c = b.compile().unwrap();
        let x = vec![0.0; c.n_coeffs()];
        let losses = c.term_losses(&x).unwrap();
        let pts = &b.spec.sets[1].points;
        let expect = pts.iter().map(|p| allen_cahn_initial(p[0]).powi(2)).sum::<f64>() / pts.len() as f64;
        assert!((losses[1] - expect).abs() < 1e-14);
        assert_eq!(losses[0], 0.0);
    }
}
