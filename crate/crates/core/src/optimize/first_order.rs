//! Adam and NAdam with optional diagonal preconditioning.

use std::time::Instant;

use super::{FirstOrderConfig, HistoryRow, LeastSquares, OptimizeError, RunReport, Termination};
use crate::residual::{adaptive_weights, l1_penalty, l1_subgradient, Weighting};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs `config.steps` Adam (or NAdam when `nesterov`) updates.
///
/// Updates act on `C~ = C / w`; losses, gradients and the L1 penalty are taken in `C`.
pub fn run_first_order<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &[f64],
    config: &FirstOrderConfig,
    nesterov: bool,
    observer: &mut dyn FnMut(&HistoryRow),
) -> Result<RunReport, OptimizeError> {
    let start = Instant::now();
    let n = problem.n_params();
    if x0.len() != n {
        return Err(OptimizeError::Config(format!("expected {n} parameters, got {}", x0.len())));
    }
    let w = if config.precondition { problem.preconditioner() } else { vec![1.0; n] };
    let mut weights = problem.default_weights();
    let weighting = problem.weighting();

    let mut x = x0.to_vec();
    let mut xt: Vec<f64> = x.iter().zip(&w).map(|(c, w)| c / w).collect();
    let mut last_good = x.clone();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::with_capacity(config.steps + 1);
    let mut reference: Option<f64> = None;
    let (b1, b2) = (config.beta1, config.beta2);
    let mut degenerate = false;

    let diverged = |x: Vec<f64>, history: Vec<HistoryRow>, step: usize, why: String| RunReport {
        x,
        history,
        iterations: step,
        termination: Termination::Diverged(why),
        wall_time: start.elapsed().as_secs_f64(),
    };

    for step in 0..=config.steps {
        let (mut breakdown, mut grad, per_term) = match problem.gradients(&x, &weights) {
            Ok(r) => r,
            Err(e) => return Ok(diverged(last_good, history, step, e.to_string())),
        };
        if let Weighting::Adaptive { epsilon, cap, every } = weighting {
            if step < config.steps && (step % every.max(1) == 0 || degenerate) {
                let norms: Vec<f64> = per_term.iter().map(|g| norm(g)).collect();
                // a term with no gradient yet gets the capped weight; refresh as soon as it has one
                degenerate = norms.iter().any(|g| *g == 0.0);
                weights = adaptive_weights(&norms, epsilon, cap);
                grad = vec![0.0; n];
                for (g, lam) in per_term.iter().zip(&weights) {
                    grad.iter_mut().zip(g).for_each(|(a, b)| *a += lam * b);
                }
                breakdown = crate::residual::LossBreakdown::new(breakdown.terms, weights.clone());
            }
        }
        let total = breakdown.total + l1_penalty(&x, config.l1);
        let raw: f64 = breakdown.terms.iter().sum();
        let limit = config.divergence_factor * reference.unwrap_or(raw).max(f64::MIN_POSITIVE);
        if !total.is_finite() || !raw.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Ok(diverged(last_good, history, step, format!("non-finite loss at step {step}")));
        }
        if raw > limit {
            return Ok(diverged(
                last_good,
                history,
                step,
                format!("loss {raw:.3e} exceeded {limit:.3e} at step {step}"),
            ));
        }
        reference.get_or_insert(raw);
        let row = HistoryRow { step, total, terms: breakdown.terms, weights: weights.clone() };
        observer(&row);
        history.push(row);
        last_good.copy_from_slice(&x);
        if step == config.steps {
            break;
        }

        let sub = l1_subgradient(&x, config.l1);
        let t = (step + 1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let c1_next = 1.0 - b1.powi(t + 1);
        for i in 0..n {
            let g = (grad[i] + sub[i]) * w[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = if nesterov { b1 * m[i] / c1_next + (1.0 - b1) * g / c1 } else { m[i] / c1 };
            let v_hat = v[i] / c2;
            xt[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
            x[i] = w[i] * xt[i];
        }
    }

    Ok(RunReport {
        x: last_good,
        history,
        iterations: config.steps,
        termination: Termination::MaxSteps,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::DenseResiduals;
    use crate::residual::LossBreakdown;
    use ndarray::Array2;

    fn shifted_quadratic(target: Vec<f64>) -> impl LeastSquares {
        let n = target.len();
        let t2 = target.clone();
        DenseResiduals {
            n,
            residual: move |x: &[f64]| x.iter().zip(&target).map(|(a, b)| a - b).collect(),
            jacobian: move |_: &[f64]| Array2::eye(t2.len()),
            affine: true,
        }
    }

    fn cfg(lr: f64, steps: usize) -> FirstOrderConfig {
        FirstOrderConfig { l1: 0.0, precondition: false, ..FirstOrderConfig::new(lr, steps) }
    }

    #[test]
    fn first_adam_step_has_length_lr() {
        let p = shifted_quadratic(vec![3.0, -2.0, 0.5]);
        let r = run_first_order(&p, &[0.0; 3], &cfg(0.01, 1), false, &mut |_| {}).unwrap();
        let expected = [0.01, -0.01, 0.01];
        for (a, b) in r.x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let p = shifted_quadratic(vec![1.0, 2.0]);
        for nesterov in [false, true] {
            let r = run_first_order(&p, &[1.0, 2.0], &cfg(0.1, 25), nesterov, &mut |_| {}).unwrap();
            assert_eq!(r.x, vec![1.0, 2.0]);
            assert!(r.history.iter().all(|h| h.total == 0.0));
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let p = shifted_quadratic(vec![0.7, -1.3, 2.1, 0.0]);
        for nesterov in [false, true] {
            let r = run_first_order(&p, &[0.0; 4], &cfg(0.05, 3000), nesterov, &mut |_| {}).unwrap();
            assert_eq!(r.termination, Termination::MaxSteps);
            assert!(r.final_loss() < 1e-8, "loss {}", r.final_loss());
            assert_eq!(r.history.len(), 3001);
        }
    }

    #[test]
    fn huge_learning_rate_diverges_with_finite_state() {
        let p = DenseResiduals {
            n: 1,
            residual: |x: &[f64]| vec![x[0].powi(3) - 1.0],
            jacobian: |x: &[f64]| Array2::from_elem((1, 1), 3.0 * x[0] * x[0]),
            affine: false,
        };
        let r = run_first_order(&p, &[0.5], &cfg(1e6, 50), false, &mut |_| {}).unwrap();
        assert!(matches!(r.termination, Termination::Diverged(_)));
        assert!(r.x.iter().all(|v| v.is_finite()));
        assert!(r.history.iter().all(|h| h.total.is_finite()));
    }

    #[test]
    fn observer_sees_every_row() {
        let p = shifted_quadratic(vec![1.0]);
        let mut seen = 0;
        let r = run_first_order(&p, &[0.0], &cfg(0.1, 10), true, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, r.history.len());
    }

    /// Terms `(x0 - 1)^2` and `(10 x0)^2`; the second has no gradient at the origin.
    struct SilentStart;

    impl LeastSquares for SilentStart {
        fn n_params(&self) -> usize {
            1
        }
        fn n_terms(&self) -> usize {
            2
        }
        fn losses(&self, x: &[f64], weights: &[f64]) -> Result<LossBreakdown, OptimizeError> {
            Ok(LossBreakdown::new(vec![(x[0] - 1.0).powi(2), (10.0 * x[0]).powi(2)], weights.to_vec()))
        }
        fn normal_system(&self, _: &[f64], _: &[f64]) -> Result<(Array2<f64>, Vec<f64>, f64), OptimizeError> {
            unreachable!("first-order only")
        }
        fn gradients(&self, x: &[f64], weights: &[f64]) -> Result<(LossBreakdown, Vec<f64>, Vec<Vec<f64>>), OptimizeError> {
            let per = vec![vec![2.0 * (x[0] - 1.0)], vec![200.0 * x[0]]];
            let g = vec![weights[0] * per[0][0] + weights[1] * per[1][0]];
            Ok((self.losses(x, weights)?, g, per))
        }
        fn weighting(&self) -> Weighting {
            Weighting::Adaptive { epsilon: 1e-8, cap: 1e6, every: 10 }
        }
    }

    #[test]
    fn capped_weight_is_refreshed_once_the_term_has_a_gradient() {
        let r = run_first_order(&SilentStart, &[0.0], &cfg(0.01, 12), false, &mut |_| {}).unwrap();
        assert_eq!(r.history[0].weights[1], 1e6);
        for h in &r.history[1..] {
            assert!(h.weights[1] < 10.0, "step {}: {:?}", h.step, h.weights);
        }
    }
}
