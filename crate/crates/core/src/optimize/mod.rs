//! Loss minimization over packed coefficient vectors.

pub mod first_order;
pub mod gauss_newton;
pub mod linalg;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::TensorBasisSpec;
use crate::residual::{CompiledProblem, LossBreakdown, ResidualError, Weighting};

pub use first_order::run_first_order;
pub use gauss_newton::run_gauss_newton;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("objective evaluation failed: {0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderConfig {
    pub lr: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optimize in preconditioned coordinates `C = w * C~`.
    pub precondition: bool,
    /// L1 penalty strength on the coefficients.
    pub l1: f64,
    /// A loss above this multiple of the initial loss counts as divergence.
    pub divergence_factor: f64,
}

impl FirstOrderConfig {
    pub fn new(lr: f64, steps: usize) -> Self {
        FirstOrderConfig {
            lr,
            steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            precondition: true,
            l1: DEFAULT_L1,
            divergence_factor: 1e8,
        }
    }
}

pub const DEFAULT_L1: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_iters: usize,
    /// Initial trust radius (Dogleg) or damping (Levenberg-Marquardt).
    pub initial: f64,
}

impl SecondOrderConfig {
    pub fn dogleg() -> Self {
        SecondOrderConfig { rtol: 1e-6, atol: 1e-6, max_iters: 500, initial: 100.0 }
    }

    pub fn levenberg_marquardt() -> Self {
        SecondOrderConfig { rtol: 1e-6, atol: 1e-6, max_iters: 500, initial: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Adam(FirstOrderConfig),
    NAdam(FirstOrderConfig),
    Dogleg(SecondOrderConfig),
    LevenbergMarquardt(SecondOrderConfig),
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Adam(_) => "adam",
            OptimizerConfig::NAdam(_) => "nadam",
            OptimizerConfig::Dogleg(_) => "dogleg",
            OptimizerConfig::LevenbergMarquardt(_) => "lm",
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        match self {
            OptimizerConfig::Adam(c) | OptimizerConfig::NAdam(c) => {
                if !(c.lr > 0.0) || c.steps == 0 {
                    return Err(OptimizeError::Config("lr must be positive and steps at least 1".into()));
                }
                if !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.eps > 0.0) {
                    return Err(OptimizeError::Config("betas must lie in [0, 1) and eps be positive".into()));
                }
                if !(c.l1 >= 0.0) || !(c.divergence_factor > 1.0) {
                    return Err(OptimizeError::Config("l1 must be >= 0 and divergence_factor > 1".into()));
                }
            }
            OptimizerConfig::Dogleg(c) | OptimizerConfig::LevenbergMarquardt(c) => {
                if !(c.rtol > 0.0 && c.atol > 0.0) || c.max_iters == 0 || !(c.initial > 0.0) {
                    return Err(OptimizeError::Config(
                        "tolerances and initial radius/damping must be positive, max_iters at least 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxSteps,
    Diverged(String),
    NumericalFailure(String),
}

impl Termination {
    pub fn is_failure(&self) -> bool {
        matches!(self, Termination::Diverged(_) | Termination::NumericalFailure(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    /// Weighted loss, including any L1 penalty.
    pub total: f64,
    /// Unweighted per-term losses.
    pub terms: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Last finite coefficients.
    pub x: Vec<f64>,
    pub history: Vec<HistoryRow>,
    pub iterations: usize,
    pub termination: Termination,
    pub wall_time: f64,
}

impl RunReport {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.total)
    }
}

/// Objective `sum_i lambda_i L_i(x)` with `L_i` a mean of squared residuals.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_terms(&self) -> usize;
    fn losses(&self, x: &[f64], weights: &[f64]) -> Result<LossBreakdown, OptimizeError>;
    /// `(J^T J, J^T r, |r|^2)` of the scaled residual vector.
    fn normal_system(&self, x: &[f64], weights: &[f64]) -> Result<(Array2<f64>, Vec<f64>, f64), OptimizeError>;
    /// Breakdown, total gradient and per-term gradients.
    fn gradients(&self, x: &[f64], weights: &[f64])
        -> Result<(LossBreakdown, Vec<f64>, Vec<Vec<f64>>), OptimizeError>;
    /// Residuals are affine in `x`, so `J^T J` never changes.
    fn is_affine(&self) -> bool {
        false
    }
    fn default_weights(&self) -> Vec<f64> {
        vec![1.0; self.n_terms()]
    }
    fn weighting(&self) -> Weighting {
        Weighting::Fixed
    }
    /// Per-parameter preconditioner weights.
    fn preconditioner(&self) -> Vec<f64> {
        vec![1.0; self.n_params()]
    }
}

impl LeastSquares for CompiledProblem {
    fn n_params(&self) -> usize {
        self.n_coeffs()
    }

    fn n_terms(&self) -> usize {
        CompiledProblem::n_terms(self)
    }

    fn losses(&self, x: &[f64], weights: &[f64]) -> Result<LossBreakdown, OptimizeError> {
        Ok(self.total_loss(x, weights)?)
    }

    fn normal_system(&self, x: &[f64], weights: &[f64]) -> Result<(Array2<f64>, Vec<f64>, f64), OptimizeError> {
        Ok(CompiledProblem::normal_system(self, x, weights)?)
    }

    fn gradients(
        &self,
        x: &[f64],
        weights: &[f64],
    ) -> Result<(LossBreakdown, Vec<f64>, Vec<Vec<f64>>), OptimizeError> {
        Ok(CompiledProblem::gradients(self, x, weights)?)
    }

    fn is_affine(&self) -> bool {
        CompiledProblem::is_affine(self)
    }

    fn default_weights(&self) -> Vec<f64> {
        CompiledProblem::default_weights(self)
    }

    fn weighting(&self) -> Weighting {
        CompiledProblem::weighting(self)
    }

    fn preconditioner(&self) -> Vec<f64> {
        self.fields().iter().flat_map(|f| preconditioner_weights(&f.spec)).collect()
    }
}

/// `w(k_1..k_d) = 1 / (1 + k_1^2 + ... + k_d^2)` for every coefficient, row-major.
pub fn preconditioner_weights(spec: &TensorBasisSpec) -> Vec<f64> {
    (0..spec.total_modes())
        .map(|flat| {
            let idx = spec.unflatten(flat);
            let s: usize = idx.iter().zip(&spec.dims).map(|(&k, d)| d.mode_index(k).pow(2)).sum();
            1.0 / (1.0 + s as f64)
        })
        .collect()
}

/// `C~ = C / w`.
pub fn precondition_params(c: &[f64], w: &[f64]) -> Vec<f64> {
    c.iter().zip(w).map(|(c, w)| c / w).collect()
}

/// `C = w * C~`.
pub fn unprecondition_params(ct: &[f64], w: &[f64]) -> Vec<f64> {
    ct.iter().zip(w).map(|(c, w)| c * w).collect()
}

/// Single-term objective `|r(x)|^2` from explicit residual and Jacobian closures.
pub struct DenseResiduals<R, J>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> Array2<f64>,
{
    pub n: usize,
    pub residual: R,
    pub jacobian: J,
    pub affine: bool,
}

impl<R, J> LeastSquares for DenseResiduals<R, J>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> Array2<f64>,
{
    fn n_params(&self) -> usize {
        self.n
    }

    fn n_terms(&self) -> usize {
        1
    }

    fn losses(&self, x: &[f64], weights: &[f64]) -> Result<LossBreakdown, OptimizeError> {
        let r = (self.residual)(x);
        let l: f64 = r.iter().map(|v| v * v).sum();
        if !l.is_finite() {
            return Err(OptimizeError::Evaluation("non-finite residual".into()));
        }
        Ok(LossBreakdown::new(vec![l], weights.to_vec()))
    }

    fn normal_system(&self, x: &[f64], weights: &[f64]) -> Result<(Array2<f64>, Vec<f64>, f64), OptimizeError> {
        let s = weights[0].sqrt();
        let r: Vec<f64> = (self.residual)(x).iter().map(|v| v * s).collect();
        let j = (self.jacobian)(x) * s;
        let jtr = j.t().dot(&ndarray::Array1::from(r.clone())).to_vec();
        let rr = r.iter().map(|v| v * v).sum();
        Ok((j.t().dot(&j), jtr, rr))
    }

    fn gradients(
        &self,
        x: &[f64],
        weights: &[f64],
    ) -> Result<(LossBreakdown, Vec<f64>, Vec<Vec<f64>>), OptimizeError> {
        let r = (self.residual)(x);
        let j = (self.jacobian)(x);
        let g: Vec<f64> = j.t().dot(&ndarray::Array1::from(r.clone())).iter().map(|v| 2.0 * v).collect();
        let total = g.iter().map(|v| v * weights[0]).collect();
        let l = r.iter().map(|v| v * v).sum();
        Ok((LossBreakdown::new(vec![l], weights.to_vec()), total, vec![g]))
    }

    fn is_affine(&self) -> bool {
        self.affine
    }
}

/// Runs the configured optimizer from `x0`.
pub fn run<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &[f64],
    config: &OptimizerConfig,
    observer: &mut dyn FnMut(&HistoryRow),
) -> Result<RunReport, OptimizeError> {
    config.validate()?;
    match config {
        OptimizerConfig::Adam(c) => run_first_order(problem, x0, c, false, observer),
        OptimizerConfig::NAdam(c) => run_first_order(problem, x0, c, true, observer),
        OptimizerConfig::Dogleg(c) => run_gauss_newton(problem, x0, c, gauss_newton::Method::Dogleg, observer),
        OptimizerConfig::LevenbergMarquardt(c) => {
            run_gauss_newton(problem, x0, c, gauss_newton::Method::LevenbergMarquardt, observer)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFamily, BasisSpec1D};

    #[test]
    fn preconditioner_examples() {
        let s = BasisSpec1D::new(BasisFamily::Chebyshev, 5, -1.0, 1.0).unwrap();
        let spec = TensorBasisSpec::new(vec![s, s]).unwrap();
        let w = preconditioner_weights(&spec);
        assert_eq!(w[spec.flatten(&[0, 0])], 1.0);
        assert!((w[spec.flatten(&[1, 2])] - 1.0 / 6.0).abs() < 1e-16);
        assert!((w[spec.flatten(&[3, 4])] - 1.0 / 26.0).abs() < 1e-16);
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        let c: Vec<f64> = (0..25).map(|i| (i as f64).sin() * 3.7).collect();
        let back = unprecondition_params(&precondition_params(&c, &w), &w);
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn fourier_pairs_share_index() {
        let f = BasisSpec1D::new(BasisFamily::FourierFull, 5, 0.0, 1.0).unwrap();
        let spec = TensorBasisSpec::new(vec![f]).unwrap();
        assert_eq!(preconditioner_weights(&spec), vec![1.0, 0.5, 0.5, 0.2, 0.2]);
    }
}
