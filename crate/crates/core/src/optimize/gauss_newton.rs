//! Gauss-Newton family: Powell dogleg and Levenberg-Marquardt.

use std::time::Instant;

use ndarray::{Array1, Array2};

use super::linalg::SpdFactor;
use super::{HistoryRow, LeastSquares, OptimizeError, RunReport, SecondOrderConfig, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dogleg,
    LevenbergMarquardt,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(b: &Array2<f64>, p: &[f64]) -> f64 {
    let bp = b.dot(&Array1::from(p.to_vec()));
    dot(p, bp.as_slice().unwrap())
}

fn dogleg_step(b: &Array2<f64>, g: &[f64], gn: &[f64], radius: f64) -> Vec<f64> {
    let gn_norm = dot(gn, gn).sqrt();
    if gn_norm <= radius {
        return gn.to_vec();
    }
    let gg = dot(g, g);
    let gbg = quad(b, g);
    let g_norm = gg.sqrt();
    if gbg <= 0.0 {
        return g.iter().map(|v| -radius * v / g_norm).collect();
    }
    let alpha = gg / gbg;
    let sd: Vec<f64> = g.iter().map(|v| -alpha * v).collect();
    let sd_norm = alpha * g_norm;
    if sd_norm >= radius {
        return g.iter().map(|v| -radius * v / g_norm).collect();
    }
    let d: Vec<f64> = gn.iter().zip(&sd).map(|(a, b)| a - b).collect();
    let a = dot(&d, &d);
    let bq = 2.0 * dot(&sd, &d);
    let c = sd_norm * sd_norm - radius * radius;
    let tau = ((-bq + (bq * bq - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
    sd.iter().zip(&d).map(|(s, d)| s + tau * d).collect()
}

/// `B + mu * scale * I`.
fn damped(b: &Array2<f64>, mu: f64, scale: f64) -> Array2<f64> {
    let mut a = b.clone();
    a.diag_mut().iter_mut().for_each(|d| *d += mu * scale);
    a
}

/// Running maximum of `diag(B)`, never zero.
fn raise_scale(scale: f64, b: &Array2<f64>) -> f64 {
    b.diag().iter().fold(scale, |m, d| m.max(*d)).max(f64::MIN_POSITIVE)
}

/// Minimizes `|r(x)|^2` with fixed term weights.
///
/// The model is `m(p) = f + 2 g^T p + p^T B p` with `B = J^T J`, `g = J^T r`.
/// A trial step is accepted only when it lowers the loss, so the recorded history never increases.
pub fn run_gauss_newton<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &[f64],
    config: &SecondOrderConfig,
    method: Method,
    observer: &mut dyn FnMut(&HistoryRow),
) -> Result<RunReport, OptimizeError> {
    let start = Instant::now();
    let n = problem.n_params();
    if x0.len() != n {
        return Err(OptimizeError::Config(format!("expected {n} parameters, got {}", x0.len())));
    }
    let weights = problem.default_weights();
    let affine = problem.is_affine();
    let mut x = x0.to_vec();
    let mut history = Vec::new();
    let report = |x: Vec<f64>, history: Vec<HistoryRow>, iterations: usize, termination: Termination| RunReport {
        x,
        history,
        iterations,
        termination,
        wall_time: start.elapsed().as_secs_f64(),
    };

    let mut breakdown = match problem.losses(&x, &weights) {
        Ok(b) => b,
        Err(e) => return Ok(report(x, history, 0, Termination::Diverged(e.to_string()))),
    };
    let row = HistoryRow { step: 0, total: breakdown.total, terms: breakdown.terms.clone(), weights: weights.clone() };
    observer(&row);
    history.push(row);

    let (mut b, mut g, _) = problem.normal_system(&x, &weights)?;
    let mut f = breakdown.total;
    let mut factor = None;
    let mut radius = config.initial;
    let mut mu = config.initial;
    let mut nu = 2.0;
    let mut scale = raise_scale(0.0, &b);

    for iter in 1..=config.max_iters {
        if g.iter().all(|v| *v == 0.0) {
            return Ok(report(x, history, iter - 1, Termination::Converged));
        }
        let p = match method {
            Method::Dogleg => {
                if factor.is_none() {
                    factor = match SpdFactor::new(&b) {
                        Ok(fac) => Some(fac),
                        Err(e) => return Ok(report(x, history, iter - 1, Termination::NumericalFailure(e.to_string()))),
                    };
                }
                let gn = match factor.as_ref().unwrap().solve(&g) {
                    Ok(s) => s.into_iter().map(|v| -v).collect::<Vec<_>>(),
                    Err(e) => return Ok(report(x, history, iter - 1, Termination::NumericalFailure(e.to_string()))),
                };
                dogleg_step(&b, &g, &gn, radius)
            }
            Method::LevenbergMarquardt => match SpdFactor::new(&damped(&b, mu, scale)).and_then(|fac| fac.solve(&g)) {
                Ok(s) => s.into_iter().map(|v| -v).collect(),
                Err(e) => return Ok(report(x, history, iter - 1, Termination::NumericalFailure(e.to_string()))),
            },
        };
        if p.iter().any(|v| !v.is_finite()) {
            return Ok(report(x, history, iter - 1, Termination::NumericalFailure("non-finite step".into())));
        }

        let x_new: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let trial = problem.losses(&x_new, &weights).ok().filter(|t| t.total.is_finite());
        let f_new = trial.as_ref().map_or(f64::INFINITY, |t| t.total);
        let accept = f_new < f;
        let pred = -(2.0 * dot(&g, &p) + quad(&b, &p));
        let rho = if pred > 0.0 { (f - f_new) / pred } else if accept { 1.0 } else { 0.0 };
        let step_small = p.iter().zip(&x).all(|(pi, xi)| pi.abs() < config.atol + config.rtol * xi.abs());
        let f_small = (f - f_new).abs() < config.atol + config.rtol * f_new.abs();

        match method {
            Method::Dogleg => {
                let p_norm = dot(&p, &p).sqrt();
                if rho < 0.25 {
                    radius = 0.25 * radius.min(p_norm);
                } else if rho > 0.75 {
                    radius = (2.0 * radius).max(2.0 * p_norm);
                }
            }
            Method::LevenbergMarquardt => {
                if accept {
                    mu = (mu * (1.0 / 3.0_f64).max(1.0 - (2.0 * rho - 1.0).powi(3))).max(1e-15);
                    nu = 2.0;
                } else {
                    mu = (mu * nu).min(1e15);
                    nu *= 2.0;
                }
            }
        }

        if accept {
            breakdown = trial.unwrap();
            f = breakdown.total;
            if affine {
                let bp = b.dot(&Array1::from(p.clone()));
                g.iter_mut().zip(bp.iter()).for_each(|(gi, bi)| *gi += bi);
            }
            x = x_new;
            if !affine {
                match problem.normal_system(&x, &weights) {
                    Ok((nb, ng, _)) => {
                        scale = raise_scale(scale, &nb);
                        b = nb;
                        g = ng;
                        factor = None;
                    }
                    Err(e) => return Ok(report(x, history, iter, Termination::NumericalFailure(e.to_string()))),
                }
            }
        }
        let row = HistoryRow { step: iter, total: f, terms: breakdown.terms.clone(), weights: weights.clone() };
        observer(&row);
        history.push(row);

        if step_small && f_small {
            return Ok(report(x, history, iter, Termination::Converged));
        }
        if !accept && p.iter().all(|v| *v == 0.0) {
            return Ok(report(x, history, iter, Termination::Converged));
        }
    }
    Ok(report(x, history, config.max_iters, Termination::MaxSteps))
}
