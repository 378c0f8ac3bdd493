//! Coefficient tensors over a tensor-product basis, their evaluation and
//! derivative jets, and coefficient diagnostics.

pub mod contract;
pub mod io;

use std::fmt;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, TensorBasisSpec, MAX_DERIVATIVE_ORDER};
use crate::optimize::linalg::singular_values;
use contract::{BasisTables, ContractionPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("coefficient vector has {got} entries, basis needs {expected}")]
    Length { expected: usize, got: usize },
    #[error("coefficient {index} is not finite")]
    NonFinite { index: usize },
    #[error("cannot reshape {total} coefficients into ({rows}, {cols})")]
    Shape { total: usize, rows: usize, cols: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Derivative multi-index `(j_1, ..., j_d)`; all zeros is the value itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    /// `order`-th derivative along `axis` only.
    pub fn axis(d: usize, axis: usize, order: usize) -> Self {
        let mut v = vec![0; d];
        v[axis] = order;
        MultiIndex(v)
    }

    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

impl<const N: usize> From<[usize; N]> for MultiIndex {
    fn from(v: [usize; N]) -> Self {
        MultiIndex(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Map applied to the raw expansion to obtain the field value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    #[default]
    Identity,
    /// `value = exp(raw)`, used for strictly positive fields such as viscosity.
    Exp,
}

impl OutputTransform {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            OutputTransform::Identity => raw,
            OutputTransform::Exp => raw.exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputTransform::Identity => "identity",
            OutputTransform::Exp => "exp",
        }
    }
}

/// Raw field derivatives at one point. The transform tag is carried along but
/// not applied; residual expressions apply it where they need field values.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub entries: Vec<(MultiIndex, f64)>,
    pub transform: OutputTransform,
}

impl Jet {
    pub fn get(&self, idx: &MultiIndex) -> Option<f64> {
        self.entries.iter().find(|(m, _)| m == idx).map(|(_, v)| *v)
    }
}

/// Coefficient tensor `C` (flattened row-major) over a tensor basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    spec: TensorBasisSpec,
    coeffs: Vec<f64>,
    transform: OutputTransform,
}

impl CoefficientField {
    pub fn new(
        spec: TensorBasisSpec,
        coeffs: Vec<f64>,
        transform: OutputTransform,
    ) -> Result<Self, FieldError> {
        let expected = spec.total_modes();
        if coeffs.len() != expected {
            return Err(FieldError::Length { expected, got: coeffs.len() });
        }
        if let Some(index) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(CoefficientField { spec, coeffs, transform })
    }

    pub fn zeros(spec: TensorBasisSpec, transform: OutputTransform) -> Self {
        let n = spec.total_modes();
        CoefficientField { spec, coeffs: vec![0.0; n], transform }
    }

    pub fn spec(&self) -> &TensorBasisSpec {
        &self.spec
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn transform(&self) -> OutputTransform {
        self.transform
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self, FieldError> {
        CoefficientField::new(self.spec.clone(), coeffs, self.transform)
    }

    /// Field values (transform applied) at each point.
    pub fn evaluate(&self, points: &[Vec<f64>]) -> Result<Vec<f64>, FieldError> {
        let raw = self.evaluate_raw(points)?;
        Ok(raw.into_iter().map(|v| self.transform.apply(v)).collect())
    }

    /// Raw expansion `C : Phi(x)` at each point.
    pub fn evaluate_raw(&self, points: &[Vec<f64>]) -> Result<Vec<f64>, FieldError> {
        let d = self.spec.ndim();
        let jets = self.evaluate_jet(points, &[MultiIndex::zero(d)])?;
        Ok(jets.into_iter().map(|j| j.entries[0].1).collect())
    }

    pub fn evaluate_jet(
        &self,
        points: &[Vec<f64>],
        indices: &[MultiIndex],
    ) -> Result<Vec<Jet>, FieldError> {
        if let Some(index) = self.coeffs.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        let d = self.spec.ndim();
        let mut max_order = vec![0; d];
        for idx in indices {
            if idx.len() != d {
                return Err(BasisError::Dimension { expected: d, got: idx.len() }.into());
            }
            if idx.order() > MAX_DERIVATIVE_ORDER {
                return Err(BasisError::UnsupportedOrder(idx.order()).into());
            }
            for (m, &j) in max_order.iter_mut().zip(idx.as_slice()) {
                *m = (*m).max(j);
            }
        }
        for p in points {
            if p.len() != d {
                return Err(BasisError::Dimension { expected: d, got: p.len() }.into());
            }
        }
        let tables = BasisTables::build(&self.spec, points.len(), &max_order, |p, x| {
            x.copy_from_slice(&points[p])
        })?;
        let plan = ContractionPlan::new(&self.spec.shape(), indices);
        let mut ws = plan.workspace();
        let mut vals = vec![0.0; indices.len()];
        let mut out = Vec::with_capacity(points.len());
        for p in 0..points.len() {
            plan.forward(&self.coeffs, &tables, p, &mut ws, &mut vals);
            out.push(Jet {
                entries: indices.iter().cloned().zip(vals.iter().copied()).collect(),
                transform: self.transform,
            });
        }
        Ok(out)
    }

    /// Singular values of the coefficients reshaped row-major to `(rows, cols)`.
    pub fn coefficient_svd(&self, rows: usize, cols: usize) -> Result<Vec<f64>, FieldError> {
        let total = self.coeffs.len();
        if rows == 0 || cols == 0 || rows * cols != total {
            return Err(FieldError::Shape { total, rows, cols });
        }
        let view = ArrayView2::from_shape((rows, cols), &self.coeffs)
            .map_err(|_| FieldError::Shape { total, rows, cols })?;
        Ok(singular_values(view))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFamily, BasisSpec1D};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cheb2(n: usize) -> TensorBasisSpec {
        let s = BasisSpec1D::new(BasisFamily::Chebyshev, n, -1.0, 1.0).unwrap();
        TensorBasisSpec::new(vec![s, s]).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95)]).collect()
    }

    #[test]
    fn zero_and_constant_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = random_points(&mut rng, 10);
        let z = CoefficientField::zeros(cheb2(4), OutputTransform::Identity);
        assert!(z.evaluate(&pts).unwrap().iter().all(|v| *v == 0.0));
        let e = CoefficientField::zeros(cheb2(4), OutputTransform::Exp);
        assert!(e.evaluate(&pts).unwrap().iter().all(|v| *v == 1.0));
        let mut c = vec![0.0; 16];
        c[0] = 1.0;
        let one = CoefficientField::new(cheb2(4), c, OutputTransform::Identity).unwrap();
        assert!(one.evaluate(&pts).unwrap().iter().all(|v| (*v - 1.0).abs() < 1e-15));
        let jets = one.evaluate_jet(&pts, &[[2, 0].into(), [1, 1].into()]).unwrap();
        assert!(jets.iter().all(|j| j.entries.iter().all(|(_, v)| *v == 0.0)));
    }

    #[test]
    fn t2_derivative() {
        let s = BasisSpec1D::new(BasisFamily::Chebyshev, 4, -1.0, 1.0).unwrap();
        let spec = TensorBasisSpec::new(vec![s]).unwrap();
        let f = CoefficientField::new(spec, vec![0.0, 0.0, 1.0, 0.0], OutputTransform::Identity).unwrap();
        let jets = f.evaluate_jet(&[vec![0.25]], &[[1].into()]).unwrap();
        assert!((jets[0].entries[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_coefficients() {
        assert!(matches!(
            CoefficientField::new(cheb2(3), vec![0.0; 8], OutputTransform::Identity),
            Err(FieldError::Length { expected: 9, got: 8 })
        ));
        let mut c = vec![0.0; 9];
        c[4] = f64::NAN;
        assert!(matches!(
            CoefficientField::new(cheb2(3), c, OutputTransform::Identity),
            Err(FieldError::NonFinite { index: 4 })
        ));
    }

    #[test]
    fn order_zero_jet_equals_raw_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = cheb2(6);
        let c: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = CoefficientField::new(spec, c, OutputTransform::Exp).unwrap();
        let pts = random_points(&mut rng, 20);
        let raw = f.evaluate_raw(&pts).unwrap();
        let jets = f.evaluate_jet(&pts, &[[0, 0].into()]).unwrap();
        for (r, j) in raw.iter().zip(&jets) {
            assert!((r - j.entries[0].1).abs() <= 1e-14);
            assert_eq!(j.transform, OutputTransform::Exp);
        }
        let vals = f.evaluate(&pts).unwrap();
        for (r, v) in raw.iter().zip(&vals) {
            assert!((r.exp() - v).abs() < 1e-14 * v);
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = cheb2(5);
        let c1: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c2: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.3);
        let mix: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
        let f1 = CoefficientField::new(spec.clone(), c1, OutputTransform::Identity).unwrap();
        let f2 = CoefficientField::new(spec.clone(), c2, OutputTransform::Identity).unwrap();
        let fm = CoefficientField::new(spec, mix, OutputTransform::Identity).unwrap();
        let pts = random_points(&mut rng, 30);
        let (v1, v2, vm) = (f1.evaluate(&pts).unwrap(), f2.evaluate(&pts).unwrap(), fm.evaluate(&pts).unwrap());
        for i in 0..pts.len() {
            assert!((vm[i] - (a * v1[i] + b * v2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = cheb2(7);
        let c: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = CoefficientField::new(spec, c, OutputTransform::Identity).unwrap();
        let h = 1e-5;
        for p in random_points(&mut rng, 20) {
            let idx: Vec<MultiIndex> =
                vec![[1, 0].into(), [0, 1].into(), [2, 0].into(), [1, 1].into(), [0, 2].into()];
            let jet = &f.evaluate_jet(&[p.clone()], &idx).unwrap()[0];
            let shifted = |dx: f64, dy: f64, m: MultiIndex| {
                f.evaluate_jet(&[vec![p[0] + dx, p[1] + dy]], &[m]).unwrap()[0].entries[0].1
            };
            let fd = [
                (shifted(h, 0.0, [0, 0].into()) - shifted(-h, 0.0, [0, 0].into())) / (2.0 * h),
                (shifted(0.0, h, [0, 0].into()) - shifted(0.0, -h, [0, 0].into())) / (2.0 * h),
                (shifted(h, 0.0, [1, 0].into()) - shifted(-h, 0.0, [1, 0].into())) / (2.0 * h),
                (shifted(0.0, h, [1, 0].into()) - shifted(0.0, -h, [1, 0].into())) / (2.0 * h),
                (shifted(0.0, h, [0, 1].into()) - shifted(0.0, -h, [0, 1].into())) / (2.0 * h),
            ];
            for (k, want) in fd.iter().enumerate() {
                let got = jet.entries[k].1;
                assert!((got - want).abs() <= 1e-6 * got.abs().max(1.0), "{k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn svd_examples() {
        let spec = cheb2(4);
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.2, 1.0, -1.0, 4.0];
        let c: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let f = CoefficientField::new(spec.clone(), c, OutputTransform::Identity).unwrap();
        let s = f.coefficient_svd(4, 4).unwrap();
        assert!(s[0] > 1.0 && s[1..].iter().all(|x| *x < 1e-12 * s[0]));

        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let f = CoefficientField::new(spec.clone(), eye, OutputTransform::Identity).unwrap();
        assert!(f.coefficient_svd(4, 4).unwrap().iter().all(|x| (x - 1.0).abs() < 1e-14));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fro: f64 = c.iter().map(|x| x * x).sum();
        let f = CoefficientField::new(spec, c, OutputTransform::Identity).unwrap();
        let s = f.coefficient_svd(2, 8).unwrap();
        assert!((s.iter().map(|x| x * x).sum::<f64>() - fro).abs() < 1e-10);
        assert!(matches!(f.coefficient_svd(3, 5), Err(FieldError::Shape { .. })));
    }
}
