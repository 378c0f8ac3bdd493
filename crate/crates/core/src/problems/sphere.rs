//! Diffusion on the unit sphere embedded in 3D, checked against a spherical-harmonic expansion.

use std::f64::consts::PI;

use super::{
    axes, basis, default_optimizer, default_weighting, stream, tensor, BuiltProblem, ProblemError, ProblemId,
    ProblemParams, CONSTANTS,
};
use crate::basis::BasisFamily;
use crate::field::OutputTransform;
use crate::geometry::{sample_sphere_surface, stream_rng, DomainSpec, Shape};
use crate::residual::{CollocationSet, Expr, FieldDecl, LossTerm, ProblemSpec, TermKind};

pub const CAP_CENTERS: [[f64; 3]; 3] = [[-0.40, 0.40, 0.82], [0.40, 0.40, 0.82], [0.00, -0.40, 0.92]];
pub const ORACLE_LMAX: usize = 20;
pub const RECONSTRUCTION_TOLERANCE: f64 = 0.01;

/// `c0(x) = sum_i 0.5 (tanh(10 (x . x_i - 0.95)) + 1)`.
pub fn initial_condition(p: &[f64]) -> f64 {
    CAP_CENTERS
        .iter()
        .map(|c| 0.5 * ((10.0 * (p[0] * c[0] + p[1] * c[1] + p[2] * c[2] - 0.95)).tanh() + 1.0))
        .sum()
}

/// `c_t - D (lap c - d2c/dn2 - 2 dc/dn)` with `n = x` on the unit sphere.
pub fn surface_residual(d: f64) -> Expr {
    let x = |i: usize| Expr::coord(i);
    let second = |i: usize, j: usize| {
        let mut idx = [0usize; 4];
        idx[i] += 1;
        idx[j] += 1;
        Expr::jet(0, idx.to_vec())
    };
    let first = |i: usize| {
        let mut idx = [0usize; 4];
        idx[i] = 1;
        Expr::jet(0, idx.to_vec())
    };
    let lap = second(0, 0) + second(1, 1) + second(2, 2);
    let mut dnn = x(0).square() * second(0, 0) + x(1).square() * second(1, 1) + x(2).square() * second(2, 2);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        dnn = dnn + 2.0 * x(i) * x(j) * second(i, j);
    }
    let dn = x(0) * first(0) + x(1) * first(1) + x(2) * first(2);
    Expr::jet(0, [0, 0, 0, 1]) - d * (lap - dnn - 2.0 * dn)
}

/// Chebyshev (11, 11, 11, 11) over `(x, y, z, t)`, 15000 surface points in `t in [0, 2]`, 4000 at `t = 0`.
pub fn build(params: &ProblemParams) -> Result<BuiltProblem, ProblemError> {
    let id = ProblemId::SphereDiffusion;
    let t_end = ProblemParams::positive("t_end", params.t_end, 2.0)?;
    let d = ProblemParams::positive("diffusivity", params.diffusivity, CONSTANTS.sphere_diffusivity)?;
    let n = params.shape("c", &[11, 11, 11, 11])?;
    let spec = tensor(vec![
        basis(BasisFamily::Chebyshev, n[0], -1.0, 1.0)?,
        basis(BasisFamily::Chebyshev, n[1], -1.0, 1.0)?,
        basis(BasisFamily::Chebyshev, n[2], -1.0, 1.0)?,
        basis(BasisFamily::Chebyshev, n[3], 0.0, t_end)?,
    ])?;
    let domain = DomainSpec::new(Shape::SphereSurface { radius: 1.0 }).with_time(0.0, t_end);
    let pde = domain.sample_interior(params.count("pde", 15_000)?, &mut stream(params, id, "pde"))?;
    let init = domain.sample_initial(params.count("initial", 4_000)?, &mut stream(params, id, "initial"))?;
    let c0: Vec<f64> = init.iter().map(|p| initial_condition(p)).collect();
    let spec = ProblemSpec {
        fields: vec![FieldDecl::new("c", spec, OutputTransform::Identity)],
        sets: vec![CollocationSet::new("pde", pde), CollocationSet::new("initial", init).with_data("c0", c0)],
        terms: vec![
            LossTerm::new("pde", TermKind::Pde, "pde", vec![surface_residual(d)]),
            LossTerm::new("initial", TermKind::Initial, "initial", vec![Expr::value(0) - Expr::data("c0")]),
        ],
        weighting: default_weighting(id),
    };
    let mut scales = std::collections::BTreeMap::new();
    scales.insert("diffusivity".to_string(), d);
    Ok(BuiltProblem {
        id,
        spec,
        domain,
        optimizer: default_optimizer(id),
        axes: vec![axes(&["x", "y", "z", "t"])],
        scales,
        reference: None,
        params: params.clone(),
    })
}

/// Great circle in the `x = 0` plane, through both poles.
pub fn meridian(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|k| {
            let s = 2.0 * PI * k as f64 / n as f64;
            [0.0, s.sin(), s.cos()]
        })
        .collect()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Orthonormal real spherical harmonics `Y_lm` for `l <= lmax`, ordered `(l, m)` with `m = -l..=l`.
pub fn real_harmonics(lmax: usize, p: &[f64]) -> Vec<f64> {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let ct = (p[2] / r).clamp(-1.0, 1.0);
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    let phi = p[1].atan2(p[0]);
    // normalized associated Legendre values plm[l][m]
    let mut plm = vec![vec![0.0; lmax + 1]; lmax + 1];
    plm[0][0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=lmax {
        plm[m][m] = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st * plm[m - 1][m - 1];
    }
    for m in 0..lmax {
        plm[m + 1][m] = ((2 * m + 3) as f64).sqrt() * ct * plm[m][m];
    }
    for m in 0..=lmax {
        for l in m + 2..=lmax {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            plm[l][m] = a * (ct * plm[l - 1][m] - b * plm[l - 2][m]);
        }
    }
    let mut out = Vec::with_capacity((lmax + 1) * (lmax + 1));
    for (l, row) in plm.iter().enumerate() {
        for m in -(l as i64)..=(l as i64) {
            let k = m.unsigned_abs() as usize;
            let v = match m.cmp(&0) {
                std::cmp::Ordering::Equal => row[0],
                std::cmp::Ordering::Greater => 2f64.sqrt() * row[k] * (k as f64 * phi).cos(),
                std::cmp::Ordering::Less => 2f64.sqrt() * row[k] * (k as f64 * phi).sin(),
            };
            out.push(v);
        }
    }
    out
}

/// Spherical-harmonic expansion of an initial condition, evolved exactly under surface diffusion.
#[derive(Debug, Clone)]
pub struct SphereOracle {
    pub lmax: usize,
    coeffs: Vec<f64>,
}

impl SphereOracle {
    /// Projects `c0` with Gauss-Legendre (in `cos theta`) times uniform-`phi` quadrature and checks
    /// the truncated reconstruction at random held-out points.
    pub fn new<F: Fn(&[f64]) -> f64>(lmax: usize, c0: F) -> Result<Self, ProblemError> {
        let n_theta = 3 * lmax + 4;
        let n_phi = 2 * n_theta;
        let (mu, w) = gauss_legendre(n_theta);
        let mut coeffs = vec![0.0; (lmax + 1) * (lmax + 1)];
        for (&ct, &wt) in mu.iter().zip(&w) {
            let st = (1.0 - ct * ct).sqrt();
            for j in 0..n_phi {
                let phi = 2.0 * PI * j as f64 / n_phi as f64;
                let p = [st * phi.cos(), st * phi.sin(), ct];
                let f = c0(&p) * wt * 2.0 * PI / n_phi as f64;
                for (a, y) in coeffs.iter_mut().zip(real_harmonics(lmax, &p)) {
                    *a += f * y;
                }
            }
        }
        let oracle = SphereOracle { lmax, coeffs };
        let mut rng = stream_rng(0, "sphere-oracle/held-out");
        let held_out = sample_sphere_surface(1.0, 500, &mut rng);
        let err = held_out
            .iter()
            .map(|p| (oracle.evaluate(p, 0.0, 0.0) - c0(p)).abs())
            .fold(0.0_f64, f64::max);
        if err > RECONSTRUCTION_TOLERANCE {
            return Err(ProblemError::OracleResolution(format!(
                "l <= {lmax} reconstruction error {err:.3e} exceeds {RECONSTRUCTION_TOLERANCE}"
            )));
        }
        Ok(oracle)
    }

    /// `c(p, t) = sum a_lm exp(-D l (l + 1) t) Y_lm(p)`.
    pub fn evaluate(&self, p: &[f64], d: f64, t: f64) -> f64 {
        let y = real_harmonics(self.lmax, p);
        let mut k = 0;
        let mut sum = 0.0;
        for l in 0..=self.lmax {
            let decay = (-d * (l * (l + 1)) as f64 * t).exp();
            for _ in 0..2 * l + 1 {
                sum += self.coeffs[k] * decay * y[k];
                k += 1;
            }
        }
        sum
    }

    /// `integral c dS = sqrt(4 pi) a_00`, independent of time.
    pub fn surface_integral(&self) -> f64 {
        (4.0 * PI).sqrt() * self.coeffs[0]
    }
}

/// Oracle values for the built-in initial condition at `points` and time `t`.
pub fn oracle_sphere_diffusion(points: &[[f64; 3]], d: f64, t: f64) -> Result<Vec<f64>, ProblemError> {
    if !(t >= 0.0) {
        return Err(ProblemError::param("t", "must be non-negative"));
    }
    let oracle = SphereOracle::new(ORACLE_LMAX, initial_condition)?;
    Ok(points.iter().map(|p| oracle.evaluate(p, d, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CoefficientField;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let int = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((int(0) - 2.0).abs() < 1e-14);
        assert!((int(18) - 2.0 / 19.0).abs() < 1e-14);
        assert!(int(7).abs() < 1e-14);
    }

    #[test]
    fn harmonics_are_orthonormal() {
        let lmax = 4;
        let (mu, w) = gauss_legendre(12);
        let n_phi = 24;
        let m = (lmax + 1) * (lmax + 1);
        let mut gram = vec![0.0; m * m];
        for (&ct, &wt) in mu.iter().zip(&w) {
            let st = (1.0 - ct * ct).sqrt();
            for j in 0..n_phi {
                let phi = 2.0 * PI * j as f64 / n_phi as f64;
                let y = real_harmonics(lmax, &[st * phi.cos(), st * phi.sin(), ct]);
                for a in 0..m {
                    for b in 0..m {
                        gram[a * m + b] += wt * 2.0 * PI / n_phi as f64 * y[a] * y[b];
                    }
                }
            }
        }
        for a in 0..m {
            for b in 0..m {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * m + b] - e).abs() < 1e-12, "{a} {b} {}", gram[a * m + b]);
            }
        }
    }

    #[test]
    fn pure_l1_mode_decays_at_rate_two_d() {
        let o = SphereOracle::new(6, |p| p[2]).unwrap();
        let (d, t) = (0.5, 0.8);
        assert!((o.evaluate(&[0.0, 0.0, 1.0], d, t) - (-2.0 * d * t).exp()).abs() < 1e-12);
        let c = SphereOracle::new(6, |_| 1.0).unwrap();
        for t in [0.0, 0.3, 2.0] {
            assert!((c.evaluate(&[0.6, 0.0, 0.8], d, t) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_conserves_surface_integral() {
        let o = SphereOracle::new(ORACLE_LMAX, initial_condition).unwrap();
        let (mu, w) = gauss_legendre(40);
        for t in [0.0, 0.5, 2.0] {
            let mut total = 0.0;
            for (&ct, &wt) in mu.iter().zip(&w) {
                let st = (1.0 - ct * ct).sqrt();
                for j in 0..80 {
                    let phi = 2.0 * PI * j as f64 / 80.0;
                    total += wt * 2.0 * PI / 80.0 * o.evaluate(&[st * phi.cos(), st * phi.sin(), ct], 0.5, t);
                }
            }
            assert!((total - o.surface_integral()).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn too_few_modes_is_an_oracle_error() {
        assert!(matches!(SphereOracle::new(2, initial_condition), Err(ProblemError::OracleResolution(_))));
    }

    /// Least-squares Chebyshev coefficients of `exp(-2 d t)` on `[0, t_end]`.
    fn decay_coeffs(n: usize, d: f64, t_end: f64) -> Vec<f64> {
        let spec = crate::basis::BasisSpec1D::new(BasisFamily::Chebyshev, n, 0.0, t_end).unwrap();
        let ts: Vec<f64> = (0..60).map(|k| t_end * (0.5 - 0.5 * (PI * (k as f64 + 0.5) / 60.0).cos())).collect();
        let mut a = ndarray::Array2::zeros((n, n));
        let mut b = vec![0.0; n];
        for &t in &ts {
            let phi = crate::basis::eval_basis_1d(&spec, t, 0).unwrap();
            for i in 0..n {
                b[i] += phi[i] * (-2.0 * d * t).exp();
                for j in 0..n {
                    a[[i, j]] += phi[i] * phi[j];
                }
            }
        }
        crate::optimize::linalg::solve_spd(&a, &b).unwrap()
    }

    #[test]
    fn surface_laplacian_of_z_eigenfunction() {
        let d = CONSTANTS.sphere_diffusivity;
        let b = build(&ProblemParams::default().with_modes(10).with_points("pde", 200).with_points("initial", 10))
            .unwrap();
        let spec = b.spec.fields[0].spec.clone();
        let mut c = vec![0.0; spec.total_modes()];
        for (k, v) in decay_coeffs(11, d, 2.0).into_iter().enumerate() {
            c[spec.flatten(&[0, 0, 1, k])] = v;
        }
        let field = CoefficientField::new(spec, c, OutputTransform::Identity).unwrap();
        let compiled = b.compile().unwrap();
        let x = compiled.pack(&[field]).unwrap();
        let losses = compiled.term_losses(&x).unwrap();
        assert!(losses[0].sqrt() < 1e-8, "pde rms {}", losses[0].sqrt());
    }
}
