//! One-dimensional spectral basis families and their tensor products.
//!
//! Every family is evaluated on its reference interval and mapped to the
//! physical interval by an affine map. Derivatives of any order up to
//! [`MAX_DERIVATIVE_ORDER`] are produced by differentiating the defining
//! recurrences (polynomial families) or from closed forms (trigonometric
//! families), so evaluating all orders at a point costs `O(order * n_modes)`.
//!
//! Multi-dimensional coefficients are flattened in row-major order over the
//! mode indices `(k_1, ..., k_d)`: the last dimension varies fastest.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest derivative order supported by basis evaluation.
pub const MAX_DERIVATIVE_ORDER: usize = 8;

/// Points may sit outside the map interval by at most this much; they are clamped.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("derivative order {0} exceeds the supported maximum of {MAX_DERIVATIVE_ORDER}")]
    UnsupportedOrder(usize),
    #[error("coordinate {x} is not finite or lies outside [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },
    #[error("invalid basis specification: {0}")]
    InvalidSpec(String),
    #[error("point has {got} coordinates, basis expects {expected}")]
    Dimension { expected: usize, got: usize },
}

/// The family of 1D basis functions along one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    /// `T_k(xi)` on `[-1, 1]`.
    Chebyshev,
    /// `P_k(xi)` on `[-1, 1]`.
    Legendre,
    /// `cos(k pi xi)` on `[-1, 1]`, `k = 0, 1, ...`.
    CosineOnly,
    /// `1, cos(theta), sin(theta), cos(2 theta), ...` on `[0, 2 pi)`.
    FourierFull,
}

impl BasisFamily {
    pub fn name(self) -> &'static str {
        match self {
            BasisFamily::Chebyshev => "chebyshev",
            BasisFamily::Legendre => "legendre",
            BasisFamily::CosineOnly => "cosine",
            BasisFamily::FourierFull => "fourier",
        }
    }

    /// Reference interval of the family.
    pub fn reference_interval(self) -> (f64, f64) {
        match self {
            BasisFamily::FourierFull => (0.0, 2.0 * PI),
            _ => (-1.0, 1.0),
        }
    }
}

impl fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisFamily {
    type Err = BasisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "chebyshev" => Ok(BasisFamily::Chebyshev),
            "legendre" => Ok(BasisFamily::Legendre),
            "cosine" | "cosine-only" | "cosineonly" => Ok(BasisFamily::CosineOnly),
            "fourier" | "fourier-full" | "fourierfull" => Ok(BasisFamily::FourierFull),
            other => Err(BasisError::InvalidSpec(format!("unknown basis family `{other}`"))),
        }
    }
}

/// Affine map from the physical interval `[lo, hi]` onto a family's reference interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub lo: f64,
    pub hi: f64,
}

impl AffineMap {
    pub fn new(lo: f64, hi: f64) -> Result<Self, BasisError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(BasisError::InvalidSpec(format!(
                "interval [{lo}, {hi}] must be finite with lo < hi"
            )));
        }
        Ok(AffineMap { lo, hi })
    }

    pub fn identity() -> Self {
        AffineMap { lo: -1.0, hi: 1.0 }
    }

    /// `d(xi)/dx` for the given family's reference interval.
    pub fn scale(&self, family: BasisFamily) -> f64 {
        let (a, b) = family.reference_interval();
        (b - a) / (self.hi - self.lo)
    }

    /// Maps a physical coordinate to the reference interval of `family`,
    /// clamping round-off excursions past the endpoints.
    pub fn to_reference(&self, family: BasisFamily, x: f64) -> Result<f64, BasisError> {
        let tol = BOUNDARY_TOLERANCE * (1.0 + self.lo.abs().max(self.hi.abs()));
        if !x.is_finite() || x < self.lo - tol || x > self.hi + tol {
            return Err(BasisError::Domain { x, lo: self.lo, hi: self.hi });
        }
        let x = x.clamp(self.lo, self.hi);
        let (a, _) = family.reference_interval();
        Ok(a + (x - self.lo) * self.scale(family))
    }

    pub fn contains(&self, x: f64) -> bool {
        let tol = BOUNDARY_TOLERANCE * (1.0 + self.lo.abs().max(self.hi.abs()));
        x.is_finite() && x >= self.lo - tol && x <= self.hi + tol
    }
}

/// Basis along one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec1D {
    pub family: BasisFamily,
    pub n_modes: usize,
    pub map: AffineMap,
}

impl BasisSpec1D {
    pub fn new(family: BasisFamily, n_modes: usize, lo: f64, hi: f64) -> Result<Self, BasisError> {
        if n_modes == 0 {
            return Err(BasisError::InvalidSpec("n_modes must be at least 1".into()));
        }
        Ok(BasisSpec1D { family, n_modes, map: AffineMap::new(lo, hi)? })
    }

    /// Frequency-like index of mode `k`, used by the preconditioner.
    /// Trigonometric pairs `cos(j.)`, `sin(j.)` share index `j`.
    pub fn mode_index(&self, k: usize) -> usize {
        match self.family {
            BasisFamily::FourierFull => k.div_ceil(2),
            _ => k,
        }
    }
}

/// Tensor product of 1D bases, one per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBasisSpec {
    pub dims: Vec<BasisSpec1D>,
}

impl TensorBasisSpec {
    pub fn new(dims: Vec<BasisSpec1D>) -> Result<Self, BasisError> {
        if dims.is_empty() {
            return Err(BasisError::InvalidSpec("a tensor basis needs at least one dimension".into()));
        }
        Ok(TensorBasisSpec { dims })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn total_modes(&self) -> usize {
        self.dims.iter().map(|d| d.n_modes).product()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.n_modes).collect()
    }

    /// Row-major unflattening of a coefficient index.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (i, d) in self.dims.iter().enumerate().rev() {
            idx[i] = flat % d.n_modes;
            flat /= d.n_modes;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&k, d)| acc * d.n_modes + k)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dims.len() && point.iter().zip(&self.dims).all(|(&x, d)| d.map.contains(x))
    }
}

/// Evaluates all modes of `spec` at `x`, differentiated `order` times.
pub fn eval_basis_1d(spec: &BasisSpec1D, x: f64, order: usize) -> Result<Vec<f64>, BasisError> {
    let all = eval_basis_1d_orders(spec, x, order)?;
    Ok(all.into_iter().nth(order).unwrap_or_default())
}

/// Evaluates derivative orders `0..=max_order` of every mode at `x`.
/// Entry `[m][k]` is the `m`-th physical derivative of mode `k`.
pub fn eval_basis_1d_orders(
    spec: &BasisSpec1D,
    x: f64,
    max_order: usize,
) -> Result<Vec<Vec<f64>>, BasisError> {
    if max_order > MAX_DERIVATIVE_ORDER {
        return Err(BasisError::UnsupportedOrder(max_order));
    }
    let xi = spec.map.to_reference(spec.family, x)?;
    let n = spec.n_modes;
    let mut out = vec![vec![0.0; n]; max_order + 1];
    match spec.family {
        BasisFamily::Chebyshev => chebyshev_orders(xi, &mut out),
        BasisFamily::Legendre => legendre_orders(xi, &mut out),
        BasisFamily::CosineOnly => cosine_orders(xi, &mut out),
        BasisFamily::FourierFull => fourier_orders(xi, &mut out),
    }
    let scale = spec.map.scale(spec.family);
    let mut factor = 1.0;
    for row in out.iter_mut().skip(1) {
        factor *= scale;
        row.iter_mut().for_each(|v| *v *= factor);
    }
    Ok(out)
}

// T_{k+1}^{(m)} = 2 xi T_k^{(m)} + 2 m T_k^{(m-1)} - T_{k-1}^{(m)}
fn chebyshev_orders(xi: f64, out: &mut [Vec<f64>]) {
    let n = out[0].len();
    out[0][0] = 1.0;
    if n > 1 {
        out[0][1] = xi;
        if out.len() > 1 {
            out[1][1] = 1.0;
        }
    }
    for k in 1..n.saturating_sub(1) {
        for m in 0..out.len() {
            let lower = if m > 0 { 2.0 * m as f64 * out[m - 1][k] } else { 0.0 };
            out[m][k + 1] = 2.0 * xi * out[m][k] + lower - out[m][k - 1];
        }
    }
}

// (k+1) P_{k+1}^{(m)} = (2k+1) (xi P_k^{(m)} + m P_k^{(m-1)}) - k P_{k-1}^{(m)}
fn legendre_orders(xi: f64, out: &mut [Vec<f64>]) {
    let n = out[0].len();
    out[0][0] = 1.0;
    if n > 1 {
        out[0][1] = xi;
        if out.len() > 1 {
            out[1][1] = 1.0;
        }
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        for m in 0..out.len() {
            let lower = if m > 0 { m as f64 * out[m - 1][k] } else { 0.0 };
            out[m][k + 1] =
                ((2.0 * kf + 1.0) * (xi * out[m][k] + lower) - kf * out[m][k - 1]) / (kf + 1.0);
        }
    }
}

fn cosine_orders(xi: f64, out: &mut [Vec<f64>]) {
    let n = out[0].len();
    for k in 0..n {
        let w = k as f64 * PI;
        let phase = w * xi;
        let mut amp = 1.0;
        for (m, row) in out.iter_mut().enumerate() {
            row[k] = amp * (phase + m as f64 * PI / 2.0).cos();
            amp *= w;
        }
    }
}

fn fourier_orders(theta: f64, out: &mut [Vec<f64>]) {
    let n = out[0].len();
    out[0][0] = 1.0;
    for k in 1..n {
        let j = k.div_ceil(2) as f64;
        let shift = if k % 2 == 1 { 0.0 } else { -PI / 2.0 };
        let mut amp = 1.0;
        for (m, row) in out.iter_mut().enumerate() {
            row[k] = amp * (j * theta + shift + m as f64 * PI / 2.0).cos();
            amp *= j;
        }
    }
}

/// Dense design matrix: row `p` holds `prod_i phi_{i,k_i}^{(j_i)}(x_{p,i})` for every
/// row-major flattened mode index.
pub fn design_matrix(
    spec: &TensorBasisSpec,
    points: &[Vec<f64>],
    deriv: &[usize],
) -> Result<Array2<f64>, BasisError> {
    let d = spec.ndim();
    if deriv.len() != d {
        return Err(BasisError::Dimension { expected: d, got: deriv.len() });
    }
    let total: usize = deriv.iter().sum();
    if total > MAX_DERIVATIVE_ORDER {
        return Err(BasisError::UnsupportedOrder(total));
    }
    let m = spec.total_modes();
    let mut out = Array2::zeros((points.len(), m));
    let mut row = vec![0.0; m];
    for (p, point) in points.iter().enumerate() {
        if point.len() != d {
            return Err(BasisError::Dimension { expected: d, got: point.len() });
        }
        let factors = point
            .iter()
            .zip(&spec.dims)
            .zip(deriv)
            .map(|((&x, s), &j)| eval_basis_1d(s, x, j))
            .collect::<Result<Vec<_>, _>>()?;
        kron_into(&factors.iter().map(|f| f.as_slice()).collect::<Vec<_>>(), &mut row);
        out.row_mut(p).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    Ok(out)
}

/// Row-major Kronecker product of the given vectors, written to `out`.
pub fn kron_into(factors: &[&[f64]], out: &mut [f64]) {
    let total: usize = factors.iter().map(|f| f.len()).product();
    debug_assert_eq!(total, out.len());
    out[0] = 1.0;
    let mut len = 1;
    for f in factors {
        let n = f.len();
        // Expand in place from the back so earlier entries are read before being overwritten.
        for i in (0..len).rev() {
            let v = out[i];
            let base = i * n;
            for (k, &fk) in f.iter().enumerate().rev() {
                out[base + k] = v * fk;
            }
        }
        len *= n;
    }
}
