//! Small dense linear-algebra kernel: jittered Cholesky solves for the
//! Gauss-Newton normal equations and a one-sided Jacobi SVD.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: matrix is {n}x{n}, right-hand side has {len} entries")]
    Dimension { n: usize, len: usize },
    #[error("Cholesky factorization failed even with diagonal jitter {jitter:e}")]
    JitterExhausted { jitter: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Relative diagonal jitter tried in order until the factorization succeeds.
pub const JITTER_LADDER: [f64; 7] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

const BLOCK: usize = 64;

/// Cholesky factor of a symmetrically equilibrated SPD matrix.
///
/// The matrix is scaled to unit diagonal before factoring, so the jitter is
/// relative to the diagonal of the original matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: Array2<f64>,
    scale: Vec<f64>,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(a: &Array2<f64>) -> Result<Self, LinalgError> {
        let (rows, cols) = a.dim();
        if rows != cols {
            return Err(LinalgError::NotSquare { rows, cols });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let n = rows;
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = a[[i, i]];
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut scaled = a.clone();
        for ((i, j), v) in scaled.indexed_iter_mut() {
            *v *= scale[i] * scale[j];
        }
        let min_pivot = (16.0 * n as f64 * f64::EPSILON).max(1e-15);
        for &jitter in &JITTER_LADDER {
            let mut work = scaled.clone();
            for i in 0..n {
                work[[i, i]] += jitter;
            }
            if cholesky_in_place(&mut work, min_pivot).is_ok() {
                return Ok(SpdFactor { lower: work, scale, jitter });
            }
        }
        Err(LinalgError::JitterExhausted { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Relative jitter that was needed for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::Dimension { n, len: b.len() });
        }
        let mut y: Vec<f64> = b.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        let l = &self.lower;
        for i in 0..n {
            let row = l.slice(s![i, ..i]);
            let dot: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / l[[i, i]];
        }
        for i in (0..n).rev() {
            y[i] /= l[[i, i]];
            let xi = y[i];
            let row = l.slice(s![i, ..i]);
            for (yj, lij) in y[..i].iter_mut().zip(row.iter()) {
                *yj -= lij * xi;
            }
        }
        for (v, s) in y.iter_mut().zip(&self.scale) {
            *v *= s;
        }
        Ok(y)
    }
}

/// Solves `A x = b` for symmetric positive (semi-)definite `A`.
pub fn solve_spd(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    SpdFactor::new(a)?.solve(b)
}

/// Blocked right-looking Cholesky. Overwrites the lower triangle of `a` with `L`
/// and zeroes the strict upper triangle. Fails with the offending column when a
/// pivot drops below `min_pivot`.
pub fn cholesky_in_place(a: &mut Array2<f64>, min_pivot: f64) -> Result<(), usize> {
    let n = a.nrows();
    let mut kb = 0;
    while kb < n {
        let e = (kb + BLOCK).min(n);
        // diagonal block
        for j in kb..e {
            let mut d = a[[j, j]];
            for k in kb..j {
                d -= a[[j, k]] * a[[j, k]];
            }
            if !(d > min_pivot) || !d.is_finite() {
                return Err(j);
            }
            let d = d.sqrt();
            a[[j, j]] = d;
            for i in (j + 1)..e {
                let mut v = a[[i, j]];
                for k in kb..j {
                    v -= a[[i, k]] * a[[j, k]];
                }
                a[[i, j]] = v / d;
            }
        }
        if e < n {
            // panel: A21 <- A21 L11^{-T}
            for i in e..n {
                for j in kb..e {
                    let mut v = a[[i, j]];
                    for k in kb..j {
                        v -= a[[i, k]] * a[[j, k]];
                    }
                    a[[i, j]] = v / a[[j, j]];
                }
            }
            let panel = a.slice(s![e.., kb..e]).to_owned();
            let mut trailing = a.slice_mut(s![e.., e..]);
            general_mat_mul(-1.0, &panel, &panel.t(), 1.0, &mut trailing);
        }
        kb = e;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            a[[i, j]] = 0.0;
        }
    }
    Ok(())
}

/// Singular values of `a` in descending order (one-sided Jacobi).
pub fn singular_values(a: ArrayView2<'_, f64>) -> Vec<f64> {
    let (m, n) = a.dim();
    // Work on whichever side gives fewer, longer vectors.
    let cols: Vec<Vec<f64>> = if m >= n {
        (0..n).map(|j| a.column(j).to_vec()).collect()
    } else {
        (0..m).map(|i| a.row(i).to_vec()).collect()
    };
    let mut cols = cols;
    let k = cols.len();
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..k {
            for j in (i + 1)..k {
                let (alpha, beta, gamma) = {
                    let (ci, cj) = (&cols[i], &cols[j]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for (x, y) in ci.iter().zip(cj) {
                        al += x * x;
                        be += y * y;
                        ga += x * y;
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                let (left, right) = cols.split_at_mut(j);
                let (ci, cj) = (&mut left[i], &mut right[0]);
                for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
                    let xv = *x;
                    let yv = *y;
                    *x = c * xv - sn * yv;
                    *y = sn * xv + c * yv;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `A^T A` computed with a single GEMM.
pub fn gram(a: &Array2<f64>) -> Array2<f64> {
    let n = a.ncols();
    let mut out = Array2::zeros((n, n));
    general_mat_mul(1.0, &a.t(), a, 0.0, &mut out);
    out
}
