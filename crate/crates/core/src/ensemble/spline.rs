//! Natural cubic splines in the value parameterization.
//!
//! A spline on knots k_1 < ... < k_K is determined by its values g at the
//! knots; the natural boundary conditions fix the second derivatives at the
//! ends to zero and make extrapolation linear. The curvature penalty
//! integral of s''^2 is the quadratic form g' P g with P = Q R^-1 Q', whose
//! null space is exactly the constant and linear functions.

use crate::linalg::solve_tridiag;

#[derive(Debug, Clone)]
pub struct NaturalSpline {
    knots: Vec<f64>,
    /// Second-derivative recovery matrix, (K-2) x K: gamma_interior = A g.
    a: Vec<Vec<f64>>,
}

impl NaturalSpline {
    /// Build from strictly increasing knots (K >= 2).
    pub fn new(knots: Vec<f64>) -> Self {
        let k = knots.len();
        assert!(k >= 2, "need at least 2 knots");
        assert!(
            knots.windows(2).all(|w| w[1] > w[0]),
            "knots must be strictly increasing"
        );
        let m = k.saturating_sub(2);
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut a = vec![vec![0.0; k]; m];
        if m > 0 {
            // R: tridiagonal (K-2)x(K-2); Q': rows are interior-knot stencils
            let diag: Vec<f64> = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
            let off: Vec<f64> = (0..m.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();
            // solve R a_col = q_col for each basis vector of g
            for col in 0..k {
                let mut q_col = vec![0.0; m];
                for j in 0..m {
                    // stencil on g[j], g[j+1], g[j+2]
                    if col == j {
                        q_col[j] = 1.0 / h[j];
                    } else if col == j + 1 {
                        q_col[j] = -1.0 / h[j] - 1.0 / h[j + 1];
                    } else if col == j + 2 {
                        q_col[j] = 1.0 / h[j + 1];
                    }
                }
                let solved = solve_tridiag(&diag, &off, &q_col);
                for j in 0..m {
                    a[j][col] = solved[j];
                }
            }
        }
        NaturalSpline { knots, a }
    }

    pub fn n_coefficients(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// gamma coefficient row for knot index `i` (zero rows at the boundary).
    fn gamma_row(&self, i: usize) -> Option<&[f64]> {
        let k = self.knots.len();
        if i == 0 || i == k - 1 {
            None
        } else {
            Some(&self.a[i - 1])
        }
    }

    /// Weight vector w with s(x) = w . g.
    pub fn basis_row(&self, x: f64) -> Vec<f64> {
        let k = self.knots.len();
        let kn = &self.knots;
        let mut w = vec![0.0; k];
        let add_gamma = |w: &mut Vec<f64>, i: usize, c: f64| {
            if let Some(row) = self.gamma_row(i) {
                for (wi, ai) in w.iter_mut().zip(row) {
                    *wi += c * ai;
                }
            }
        };

        if x <= kn[0] {
            // linear extrapolation from the first knot
            let h = kn[1] - kn[0];
            let dx = x - kn[0];
            w[0] += 1.0 - dx / h;
            w[1] += dx / h;
            add_gamma(&mut w, 1, -dx * h / 6.0);
            return w;
        }
        if x >= kn[k - 1] {
            let h = kn[k - 1] - kn[k - 2];
            let dx = x - kn[k - 1];
            w[k - 1] += 1.0 + dx / h;
            w[k - 2] += -dx / h;
            add_gamma(&mut w, k - 2, dx * h / 6.0);
            return w;
        }
        // interior interval [kn[i], kn[i+1]]
        let i = match kn.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(pos) => pos.min(k - 2),
            Err(pos) => pos - 1,
        };
        let h = kn[i + 1] - kn[i];
        let t = x - kn[i];
        let d = kn[i + 1] - x;
        w[i] += d / h;
        w[i + 1] += t / h;
        let common = -t * d / 6.0;
        add_gamma(&mut w, i, common * (1.0 + d / h));
        add_gamma(&mut w, i + 1, common * (1.0 + t / h));
        w
    }

    pub fn evaluate(&self, coefficients: &[f64], x: f64) -> f64 {
        self.basis_row(x)
            .iter()
            .zip(coefficients)
            .map(|(w, g)| w * g)
            .sum()
    }

    /// Curvature penalty matrix P = Q R^-1 Q' (K x K); zero when K = 2.
    pub fn penalty(&self) -> Vec<Vec<f64>> {
        let k = self.knots.len();
        let m = k.saturating_sub(2);
        let h: Vec<f64> = self.knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut p = vec![vec![0.0; k]; k];
        // P = Q A where A = R^-1 Q'
        for row in 0..k {
            // row `row` of Q: nonzero at interior columns j where the stencil
            // touches g[row]
            for j in 0..m {
                let q = if row == j {
                    1.0 / h[j]
                } else if row == j + 1 {
                    -1.0 / h[j] - 1.0 / h[j + 1]
                } else if row == j + 2 {
                    1.0 / h[j + 1]
                } else {
                    0.0
                };
                if q != 0.0 {
                    for col in 0..k {
                        p[row][col] += q * self.a[j][col];
                    }
                }
            }
        }
        p
    }
}

/// Knots at equally spaced quantiles of the inputs, deduplicated. Returns
/// fewer than `limit` knots when the input has few distinct values, and an
/// empty vector when the input is effectively constant.
pub fn quantile_knots(values: &[f64], limit: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Vec::new();
    }
    let k = limit.min(distinct.len()).max(2);
    let n = sorted.len();
    let mut knots: Vec<f64> = (0..k)
        .map(|j| {
            let q = j as f64 / (k - 1) as f64;
            let idx = (q * (n - 1) as f64).round() as usize;
            sorted[idx]
        })
        .collect();
    knots.dedup();
    if knots.len() < 2 {
        return Vec::new();
    }
    knots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_linear_functions_exactly() {
        let knots = vec![-1.0, 0.0, 0.5, 2.0, 3.5];
        let spline = NaturalSpline::new(knots.clone());
        let g: Vec<f64> = knots.iter().map(|&x| 3.0 * x - 2.0).collect();
        for x in [-5.0, -1.0, -0.3, 0.25, 1.9, 3.5, 10.0] {
            let v = spline.evaluate(&g, x);
            assert!((v - (3.0 * x - 2.0)).abs() < 1e-10, "x={} v={}", x, v);
        }
        // and the penalty of a linear function is zero
        let p = spline.penalty();
        let quad: f64 = (0..g.len())
            .map(|i| (0..g.len()).map(|j| g[i] * p[i][j] * g[j]).sum::<f64>())
            .sum();
        assert!(quad.abs() < 1e-9, "penalty {}", quad);
    }

    #[test]
    fn interpolates_knot_values() {
        let knots = vec![0.0, 1.0, 2.0, 4.0];
        let spline = NaturalSpline::new(knots.clone());
        let g = vec![1.0, -1.0, 3.0, 0.5];
        for (i, &k) in knots.iter().enumerate() {
            assert!((spline.evaluate(&g, k) - g[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_is_symmetric_psd() {
        let spline = NaturalSpline::new(vec![0.0, 0.3, 1.1, 2.0, 2.4, 3.0]);
        let p = spline.penalty();
        let k = p.len();
        for i in 0..k {
            for j in 0..k {
                assert!((p[i][j] - p[j][i]).abs() < 1e-10);
            }
        }
        // random quadratic forms are nonnegative
        let mut rng = crate::rng::seeded_rng(4);
        use rand::Rng;
        for _ in 0..20 {
            let g: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let quad: f64 = (0..k)
                .map(|i| (0..k).map(|j| g[i] * p[i][j] * g[j]).sum::<f64>())
                .sum();
            assert!(quad > -1e-10);
        }
    }

    #[test]
    fn extrapolation_is_linear() {
        let spline = NaturalSpline::new(vec![0.0, 1.0, 2.0, 3.0]);
        let g = vec![0.0, 1.5, 0.5, 2.0];
        // beyond the right boundary, equal steps give equal increments
        let v1 = spline.evaluate(&g, 4.0);
        let v2 = spline.evaluate(&g, 5.0);
        let v3 = spline.evaluate(&g, 6.0);
        assert!(((v2 - v1) - (v3 - v2)).abs() < 1e-10);
        let u1 = spline.evaluate(&g, -1.0);
        let u2 = spline.evaluate(&g, -2.0);
        let u3 = spline.evaluate(&g, -3.0);
        assert!(((u1 - u2) - (u2 - u3)).abs() < 1e-10);
    }

    #[test]
    fn two_knot_spline_is_a_line() {
        let spline = NaturalSpline::new(vec![0.0, 2.0]);
        let g = vec![1.0, 5.0];
        assert!((spline.evaluate(&g, 1.0) - 3.0).abs() < 1e-12);
        assert!((spline.evaluate(&g, 3.0) - 7.0).abs() < 1e-12);
        assert!(spline.penalty().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn quantile_knots_dedupe() {
        let values = vec![1.0, 1.0, 1.0, 2.0, 2.0, 3.0];
        let knots = quantile_knots(&values, 10);
        assert_eq!(knots, vec![1.0, 2.0, 3.0]);
        assert!(quantile_knots(&[5.0; 8], 10).is_empty());
    }

    /// Curvature penalty agrees with numerical integration of s''(x)^2.
    #[test]
    fn penalty_matches_quadrature() {
        let knots = vec![0.0, 0.7, 1.5, 2.2, 3.0];
        let spline = NaturalSpline::new(knots.clone());
        let g = vec![0.3, -1.0, 2.0, 0.1, 0.8];
        let p = spline.penalty();
        let quad_form: f64 = (0..g.len())
            .map(|i| (0..g.len()).map(|j| g[i] * p[i][j] * g[j]).sum::<f64>())
            .sum();
        // numerical second derivative, integrated over the knot span
        let h = 1e-4;
        let steps = 40_000;
        let (lo, hi) = (knots[0], *knots.last().unwrap());
        let dx = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for s in 0..steps {
            let x = lo + (s as f64 + 0.5) * dx;
            let d2 = (spline.evaluate(&g, x + h) - 2.0 * spline.evaluate(&g, x)
                + spline.evaluate(&g, x - h))
                / (h * h);
            integral += d2 * d2 * dx;
        }
        assert!(
            (integral - quad_form).abs() < 1e-2 * quad_form.abs().max(1.0),
            "quadrature {} vs quadratic form {}",
            integral,
            quad_form
        );
    }
}
