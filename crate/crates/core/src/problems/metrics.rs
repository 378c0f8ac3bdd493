//! Error norms, Monte Carlo mass integrals and evaluation grids.

use rand::Rng;
use thiserror::Error;

use crate::field::{CoefficientField, FieldError};
use crate::geometry::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no in-domain points to compare")]
    Empty,
    #[error("length mismatch: {0} values vs {1} reference values")]
    Length(usize, usize),
    #[error("at least 10000 Monte Carlo samples are required, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// `(L2, Linf)` with L2 the root mean square of the pointwise difference.
pub fn error_metrics(values: &[f64], reference: &[f64]) -> Result<(f64, f64), MetricError> {
    if values.len() != reference.len() {
        return Err(MetricError::Length(values.len(), reference.len()));
    }
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sq = 0.0;
    let mut max = 0.0_f64;
    for (a, b) in values.iter().zip(reference) {
        let d = (a - b).abs();
        sq += d * d;
        max = max.max(d);
    }
    Ok(((sq / values.len() as f64).sqrt(), max))
}

/// Root mean square of `values`.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Uniform points in the disk, drawn once from `seed`.
pub fn disk_samples(center: [f64; 2], radius: f64, n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = stream_rng(seed, "mass-integral");
    (0..n)
        .map(|_| {
            let r = radius * rng.gen::<f64>().sqrt();
            let th = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            [center[0] + r * th.cos(), center[1] + r * th.sin()]
        })
        .collect()
}

/// `area * mean(c(x, y, t))` over `n_mc` uniform disk samples.
///
/// `c` takes `(x, y, t)` inputs. The samples depend only on `seed`, so the same points serve every `t`.
pub fn mass_integral(
    c: &CoefficientField,
    center: [f64; 2],
    radius: f64,
    t: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    if n_mc < 10_000 {
        return Err(MetricError::TooFewSamples(n_mc));
    }
    let pts: Vec<Vec<f64>> =
        disk_samples(center, radius, n_mc, seed).into_iter().map(|[x, y]| vec![x, y, t]).collect();
    let vals = c.evaluate(&pts)?;
    let area = std::f64::consts::PI * radius * radius;
    Ok(area * vals.iter().sum::<f64>() / n_mc as f64)
}

/// Row-major `nx * ny` grid over a rectangle, `x` varying fastest.
pub fn grid_2d(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Vec<[f64; 2]> {
    let lin = |lo: f64, hi: f64, n: usize, i: usize| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push([lin(x.0, x.1, nx, i), lin(y.0, y.1, ny, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFamily, BasisSpec1D, TensorBasisSpec};
    use crate::field::OutputTransform;

    fn field(coeffs: Vec<f64>, n: usize) -> CoefficientField {
        let s = |lo, hi| BasisSpec1D::new(BasisFamily::Chebyshev, n, lo, hi).unwrap();
        let spec = TensorBasisSpec::new(vec![s(-1.0, 1.0), s(-1.0, 1.0), s(0.0, 2.0)]).unwrap();
        CoefficientField::new(spec, coeffs, OutputTransform::Identity).unwrap()
    }

    #[test]
    fn metric_examples() {
        assert_eq!(error_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        let (l2, li) = error_metrics(&[0.5, 1.5, -2.5], &[0.2, 1.2, -2.8]).unwrap();
        assert!((l2 - 0.3).abs() < 1e-12 && (li - 0.3).abs() < 1e-12);
        let (l2, li) = error_metrics(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((l2 - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(li, 4.0);
        assert_eq!(error_metrics(&[], &[]), Err(MetricError::Empty));
        assert!(matches!(error_metrics(&[1.0], &[]), Err(MetricError::Length(1, 0))));
    }

    #[test]
    fn mass_of_simple_fields() {
        let pi = std::f64::consts::PI;
        // T_0 = 1 in every dimension
        let mut c = vec![0.0; 27];
        c[0] = 1.0;
        let one = field(c, 3);
        let m = mass_integral(&one, [0.0, 0.0], 1.0, 0.7, 100_000, 3).unwrap();
        assert!((m - pi).abs() < 1e-12, "{m}");
        let zero = field(vec![0.0; 27], 3);
        assert_eq!(mass_integral(&zero, [0.0, 0.0], 1.0, 0.0, 10_000, 3).unwrap(), 0.0);
        // 1 - x^2 - y^2 with x^2 = (T_0 + T_2) / 2
        let mut c = vec![0.0; 27];
        let at = |i: usize, j: usize| (i * 3 + j) * 3;
        c[at(0, 0)] = 0.0;
        c[at(2, 0)] = -0.5;
        c[at(0, 2)] = -0.5;
        let bowl = field(c, 3);
        let m = mass_integral(&bowl, [0.0, 0.0], 1.0, 1.0, 100_000, 9).unwrap();
        assert!((m - pi / 2.0).abs() < 0.01 * pi / 2.0, "{m}");
        assert!(matches!(mass_integral(&bowl, [0.0, 0.0], 1.0, 1.0, 10, 9), Err(MetricError::TooFewSamples(10))));
    }

    #[test]
    fn grid_layout() {
        let g = grid_2d((-1.0, 1.0), (0.0, 2.0), 3, 2);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], [-1.0, 0.0]);
        assert_eq!(g[2], [1.0, 0.0]);
        assert_eq!(g[5], [1.0, 2.0]);
    }
}
