//! The generalized additive meta-model that stacks base-learner predictions.
//!
//! prediction = intercept + sum_j s_j(pred_j), one penalized natural cubic
//! smooth per base model, fit by backfitting. Smoothness is chosen per
//! component by generalized cross-validation over a fixed log-spaced grid
//! during the first cycles, then frozen so the remaining iterations are a
//! plain convergent backfit. Linear functions span the penalty null space, so
//! an exactly-linear signal incurs no penalty.

pub mod spline;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, solve_spd_multi};
pub use spline::{quantile_knots, NaturalSpline};

#[derive(Debug, Clone)]
pub struct GamConfig {
    /// Knot budget per component (actual count = min of this and the number
    /// of distinct input values).
    pub knot_limit: usize,
    /// Candidate curvature penalties, ascending.
    pub lambda_grid: Vec<f64>,
    /// GCV denominator inflation guarding against undersmoothing.
    pub gcv_inflation: f64,
    pub max_iterations: usize,
    /// Relative change in fitted values that counts as converged.
    pub tolerance: f64,
    /// Backfitting cycles during which lambdas are re-selected by GCV.
    pub adapt_cycles: usize,
}

impl Default for GamConfig {
    fn default() -> Self {
        GamConfig {
            knot_limit: 10,
            lambda_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
            gcv_inflation: 1.4,
            max_iterations: 200,
            tolerance: 1e-8,
            adapt_cycles: 2,
        }
    }
}

/// One fitted smooth: s(x) = spline(x; knots, coefficients) - centering.
/// Empty knots mean the component is identically zero (degenerate input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothComponent {
    pub input: String,
    pub knots: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub centering: f64,
}

impl SmoothComponent {
    fn zero(input: &str) -> Self {
        SmoothComponent {
            input: input.to_string(),
            knots: Vec::new(),
            coefficients: Vec::new(),
            lambda: 0.0,
            centering: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let spline = NaturalSpline::new(self.knots.clone());
        spline.evaluate(&self.coefficients, x) - self.centering
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format_version: u32,
    /// Target mean.
    pub intercept: f64,
    /// One component per base model, in configuration order.
    pub components: Vec<SmoothComponent>,
    pub converged: bool,
    pub backfit_iterations: usize,
    pub final_change: f64,
}

/// Design matrix rows (basis at each input) for one component.
pub fn design_matrix(spline: &NaturalSpline, inputs: &[f64]) -> Vec<Vec<f64>> {
    inputs.iter().map(|&x| spline.basis_row(x)).collect()
}

/// Penalty rescaled so its scale is comparable to N'N; makes one lambda grid
/// usable across inputs with different ranges.
pub fn scaled_penalty(spline: &NaturalSpline, ntn: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut p = spline.penalty();
    let tr_p: f64 = (0..p.len()).map(|i| p[i][i]).sum();
    let tr_n: f64 = (0..ntn.len()).map(|i| ntn[i][i]).sum();
    if tr_p > 0.0 {
        let scale = tr_n / tr_p;
        for row in p.iter_mut() {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    p
}

fn xtx(design: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = design.first().map(|r| r.len()).unwrap_or(0);
    let mut out = vec![vec![0.0; k]; k];
    for row in design {
        for a in 0..k {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..k {
                out[a][b] += ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            out[a][b] = out[b][a];
        }
    }
    out
}

fn add_penalty(ntn: &[Vec<f64>], penalty: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    let k = ntn.len();
    let mut out = ntn.to_vec();
    for i in 0..k {
        for j in 0..k {
            out[i][j] += lambda * penalty[i][j];
        }
    }
    out
}

struct ComponentWork {
    name: String,
    spline: Option<NaturalSpline>,
    design: Vec<Vec<f64>>,
    ntn: Vec<Vec<f64>>,
    penalty: Vec<Vec<f64>>,
    /// Effective degrees of freedom per grid lambda, fixed across iterations.
    edf_per_lambda: Vec<f64>,
    lambda: f64,
    coefficients: Vec<f64>,
    centering: f64,
    fitted: Vec<f64>,
}

impl ComponentWork {
    fn new(name: &str, inputs: Vec<f64>, n: usize, config: &GamConfig) -> Result<Self> {
        let knots = quantile_knots(&inputs, config.knot_limit);
        if knots.is_empty() {
            return Ok(ComponentWork {
                name: name.to_string(),
                spline: None,
                design: Vec::new(),
                ntn: Vec::new(),
                penalty: Vec::new(),
                edf_per_lambda: Vec::new(),
                lambda: 0.0,
                coefficients: Vec::new(),
                centering: 0.0,
                fitted: vec![0.0; n],
            });
        }
        if n <= knots.len() {
            return Err(Error::Train(format!(
                "component '{}': {} rows for {} spline coefficients",
                name,
                n,
                knots.len()
            )));
        }
        let spline = NaturalSpline::new(knots);
        let design = design_matrix(&spline, &inputs);
        let ntn = xtx(&design);
        let penalty = scaled_penalty(&spline, &ntn);
        // edf(lambda) = tr((N'N + lambda P)^-1 N'N); depends only on the
        // design, so compute once, in parallel over the grid
        let k = ntn.len();
        let ntn_cols: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..k).map(|r| ntn[r][c]).collect())
            .collect();
        let edf_per_lambda: Vec<f64> = config
            .lambda_grid
            .par_iter()
            .map(|&lambda| {
                let m = add_penalty(&ntn, &penalty, lambda);
                let solved = solve_spd_multi(&m, &ntn_cols)?;
                Ok((0..k).map(|i| solved[i][i]).sum())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ComponentWork {
            name: name.to_string(),
            spline: Some(spline),
            design,
            ntn,
            penalty,
            edf_per_lambda,
            lambda: config.lambda_grid[0],
            coefficients: Vec::new(),
            centering: 0.0,
            fitted: vec![0.0; n],
        })
    }

    fn is_zero(&self) -> bool {
        self.spline.is_none()
    }

    fn solve_for(&self, partial: &[f64], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.ntn.len();
        let mut ntr = vec![0.0; k];
        for (row, &r) in self.design.iter().zip(partial) {
            for (a, &v) in row.iter().enumerate() {
                ntr[a] += v * r;
            }
        }
        let m = add_penalty(&self.ntn, &self.penalty, lambda);
        let beta = solve_spd(&m, &ntr)?;
        let fitted: Vec<f64> = self
            .design
            .iter()
            .map(|row| row.iter().zip(&beta).map(|(w, b)| w * b).sum())
            .collect();
        Ok((beta, fitted))
    }

    /// GCV over the grid: n * RSS / (n - inflation * edf)^2, smallest lambda
    /// winning ties.
    fn select_lambda(&self, partial: &[f64], config: &GamConfig) -> Result<f64> {
        let n = partial.len() as f64;
        let scores: Vec<f64> = config
            .lambda_grid
            .par_iter()
            .zip(&self.edf_per_lambda)
            .map(|(&lambda, &edf)| {
                let (_, fitted) = self.solve_for(partial, lambda)?;
                let rss: f64 = partial
                    .iter()
                    .zip(&fitted)
                    .map(|(r, f)| (r - f) * (r - f))
                    .sum();
                let denom = n - config.gcv_inflation * edf;
                Ok(if denom <= 1e-8 {
                    f64::INFINITY
                } else {
                    n * rss / (denom * denom)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for (i, score) in scores.iter().enumerate() {
            if *score < scores[best] {
                best = i;
            }
        }
        Ok(config.lambda_grid[best])
    }
}

/// Fit the additive stack: `base_preds` holds one column per base model in
/// configuration order, `names` the matching model identifiers.
pub fn fit_gam(
    base_preds: &[Vec<f64>],
    target: &[f64],
    names: &[String],
    config: &GamConfig,
) -> Result<EnsembleModel> {
    let m = base_preds.len();
    if m < 1 {
        return Err(Error::Train(
            "ensemble needs at least one base model column".into(),
        ));
    }
    if names.len() != m {
        return Err(Error::Train(
            "base prediction columns and names differ in count".into(),
        ));
    }
    let n = target.len();
    for (j, col) in base_preds.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Train(format!(
                "base prediction column {} has {} rows, target has {}",
                j,
                col.len(),
                n
            )));
        }
    }
    if config.lambda_grid.is_empty() {
        return Err(Error::Train("empty lambda grid".into()));
    }

    let intercept = target.iter().sum::<f64>() / n as f64;
    let mut components: Vec<ComponentWork> = names
        .iter()
        .zip(base_preds)
        .map(|(name, col)| ComponentWork::new(name, col.clone(), n, config))
        .collect::<Result<Vec<_>>>()?;

    let mut residual: Vec<f64> = target.iter().map(|y| y - intercept).collect();
    let mut fitted_prev: Vec<f64> = vec![intercept; n];
    let mut converged = false;
    let mut iterations = 0;
    let mut final_change = f64::MAX;
    let mut partial = vec![0.0; n];

    for iteration in 0..config.max_iterations {
        iterations = iteration + 1;
        for component in components.iter_mut() {
            if component.is_zero() {
                continue;
            }
            for i in 0..n {
                partial[i] = residual[i] + component.fitted[i];
            }
            if iteration < config.adapt_cycles {
                component.lambda = component.select_lambda(&partial, config)?;
            }
            let (beta, fitted) = component.solve_for(&partial, component.lambda)?;
            let center = fitted.iter().sum::<f64>() / n as f64;
            component.coefficients = beta;
            component.centering = center;
            for i in 0..n {
                let s = fitted[i] - center;
                residual[i] = partial[i] - s;
                component.fitted[i] = s;
            }
        }
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..n {
            let f = target[i] - residual[i];
            diff2 += (f - fitted_prev[i]) * (f - fitted_prev[i]);
            norm2 += fitted_prev[i] * fitted_prev[i];
            fitted_prev[i] = f;
        }
        final_change = diff2.sqrt() / norm2.sqrt().max(1e-8);
        if final_change < config.tolerance {
            converged = true;
            break;
        }
    }

    Ok(EnsembleModel {
        format_version: 1,
        intercept,
        components: components
            .into_iter()
            .map(|c| {
                if c.is_zero() {
                    SmoothComponent::zero(&c.name)
                } else {
                    SmoothComponent {
                        input: c.name,
                        knots: c.spline.unwrap().knots().to_vec(),
                        coefficients: c.coefficients,
                        lambda: c.lambda,
                        centering: c.centering,
                    }
                }
            })
            .collect(),
        converged,
        backfit_iterations: iterations,
        final_change,
    })
}

/// Evaluate the stack on base-model prediction columns (configuration order).
pub fn predict_gam(model: &EnsembleModel, base_preds: &[Vec<f64>]) -> Result<Vec<f64>> {
    if base_preds.len() != model.components.len() {
        return Err(Error::Predict(format!(
            "{} base prediction columns for {} components",
            base_preds.len(),
            model.components.len()
        )));
    }
    let n = base_preds.first().map(|c| c.len()).unwrap_or(0);
    for col in base_preds {
        if col.len() != n {
            return Err(Error::Predict("ragged base prediction columns".into()));
        }
    }
    let mut out = vec![model.intercept; n];
    for (component, col) in model.components.iter().zip(base_preds) {
        if component.is_zero() {
            continue;
        }
        let spline = NaturalSpline::new(component.knots.clone());
        for (o, &x) in out.iter_mut().zip(col) {
            *o += spline.evaluate(&component.coefficients, x) - component.centering;
        }
    }
    Ok(out)
}

pub fn save_ensemble(model: &EnsembleModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_yaml::to_string(model).map_err(|e| Error::Yaml {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: EnsembleModel = serde_yaml::from_str(&text).map_err(|e| Error::Yaml {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if model.format_version != 1 {
        return Err(Error::Train(format!(
            "{}: unsupported ensemble format version {}",
            path.display(),
            model.format_version
        )));
    }
    Ok(model)
}
