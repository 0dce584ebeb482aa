//! Minimal dense linear algebra for the small symmetric systems that show up
//! in ridge imputation and penalized spline fitting (p rarely exceeds ~15).

use crate::error::{Error, Result};

/// Dense symmetric positive-definite solve via Cholesky, `a x = b`.
///
/// `a` is row-major n*n and must be symmetric. If the factorization stalls on
/// a semidefinite direction, a small diagonal jitter proportional to the trace
/// is added and the solve is retried once.
pub fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    debug_assert_eq!(b.len(), n);
    match cholesky(a) {
        Some(l) => Ok(chol_solve(&l, b)),
        None => {
            let trace: f64 = (0..n).map(|i| a[i][i]).sum();
            let jitter = 1e-10 * (trace / n as f64).max(1.0);
            let mut aj = a.to_vec();
            for (i, row) in aj.iter_mut().enumerate() {
                row[i] += jitter;
            }
            let l =
                cholesky(&aj).ok_or_else(|| Error::Train("singular symmetric system".into()))?;
            Ok(chol_solve(&l, b))
        }
    }
}

/// Solve `a X = B` for several right-hand sides, reusing one factorization.
pub fn solve_spd_multi(a: &[Vec<f64>], bs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let l = match cholesky(a) {
        Some(l) => l,
        None => {
            let trace: f64 = (0..n).map(|i| a[i][i]).sum();
            let jitter = 1e-10 * (trace / n as f64).max(1.0);
            let mut aj = a.to_vec();
            for (i, row) in aj.iter_mut().enumerate() {
                row[i] += jitter;
            }
            cholesky(&aj).ok_or_else(|| Error::Train("singular symmetric system".into()))?
        }
    };
    Ok(bs.iter().map(|b| chol_solve(&l, b)).collect())
}

fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    // forward: L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    // backward: L' x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    x
}

/// Solve a symmetric tridiagonal system given diagonal `d` and off-diagonal `e`
/// (Thomas algorithm). Used for natural-spline second-derivative recovery.
pub fn solve_tridiag(d: &[f64], e: &[f64], b: &[f64]) -> Vec<f64> {
    let n = d.len();
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut denom = d[0];
    x[0] = b[0] / denom;
    for i in 1..n {
        c[i] = e[i - 1] / denom;
        denom = d[i] - e[i - 1] * c[i];
        x[i] = (b[i] - e[i - 1] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i + 1] * x[i + 1];
    }
    x
}
