//! Yeo-Johnson power transform fitted by skewness minimization.
//!
//! Lambda = 1 is the identity point, which anchors the tests; the search
//! minimizes |sample skewness| over [-2, 2] by golden-section.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::table::SiteDayTable;

pub const LAMBDA_LO: f64 = -2.0;
pub const LAMBDA_HI: f64 = 2.0;
pub const SEARCH_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub family: String,
    /// Fitted lambda per transformed variable.
    pub lambdas: BTreeMap<String, f64>,
}

pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        if lambda.abs() < 1e-12 {
            (x + 1.0).ln()
        } else {
            ((x + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < 1e-12 {
        -(-x + 1.0).ln()
    } else {
        -((-x + 1.0).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

pub fn yeo_johnson_inv(y: f64, lambda: f64) -> f64 {
    if y >= 0.0 {
        if lambda.abs() < 1e-12 {
            y.exp() - 1.0
        } else {
            (lambda * y + 1.0).powf(1.0 / lambda) - 1.0
        }
    } else if (lambda - 2.0).abs() < 1e-12 {
        1.0 - (-y).exp()
    } else {
        1.0 - (1.0 - (2.0 - lambda) * y).powf(1.0 / (2.0 - lambda))
    }
}

/// Biased sample skewness g1 = m3 / m2^(3/2); zero for degenerate samples.
pub fn sample_skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if n < 1.0 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if m2 <= 1e-300 {
        return 0.0;
    }
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

fn abs_skew_after(xs: &[f64], lambda: f64) -> f64 {
    let transformed: Vec<f64> = xs.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    sample_skewness(&transformed).abs()
}

/// Golden-section search for the lambda in [-2, 2] minimizing |skewness|.
pub fn fit_lambda(xs: &[f64]) -> f64 {
    // constant column: transform is pointless, keep the identity
    let first = xs[0];
    if xs.iter().all(|&x| x == first) {
        return 1.0;
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (LAMBDA_LO, LAMBDA_HI);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = abs_skew_after(xs, c);
    let mut fd = abs_skew_after(xs, d);
    while (b - a) > SEARCH_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = abs_skew_after(xs, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = abs_skew_after(xs, d);
        }
    }
    0.5 * (a + b)
}

fn observed(table: &SiteDayTable, variable: &str) -> Result<Vec<f64>> {
    let col = table
        .column(variable)
        .ok_or_else(|| Error::Preprocess(format!("no column '{}'", variable)))?;
    Ok(col.values.iter().filter_map(|v| *v).collect())
}

/// Fit one lambda per variable. Columns fit in parallel, merged in
/// alphabetical order.
pub fn fit_transform(table: &SiteDayTable, variables: &[String]) -> Result<TransformParams> {
    let fitted: Vec<(String, f64)> = variables
        .par_iter()
        .map(|name| {
            let xs = observed(table, name)?;
            if xs.is_empty() {
                return Err(Error::Preprocess(format!(
                    "column '{}' is all-missing",
                    name
                )));
            }
            if xs.len() < 3 {
                return Err(Error::Preprocess(format!(
                    "column '{}' needs at least 3 observed values, has {}",
                    name,
                    xs.len()
                )));
            }
            Ok((name.clone(), fit_lambda(&xs)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformParams {
        family: "yeo-johnson".to_string(),
        lambdas: fitted.into_iter().collect(),
    })
}

pub fn apply_transform(table: &SiteDayTable, params: &TransformParams) -> Result<SiteDayTable> {
    let mut out = table.clone();
    for (name, &lambda) in &params.lambdas {
        let col = out
            .column(name)
            .ok_or_else(|| Error::Preprocess(format!("no column '{}' to transform", name)))?;
        let values = col
            .values
            .iter()
            .map(|v| v.map(|x| yeo_johnson(x, lambda)))
            .collect();
        out = out.with_column_values(name, values)?;
    }
    Ok(out)
}

pub fn invert_transform(table: &SiteDayTable, params: &TransformParams) -> Result<SiteDayTable> {
    let mut out = table.clone();
    for (name, &lambda) in &params.lambdas {
        let col = out
            .column(name)
            .ok_or_else(|| Error::Preprocess(format!("no column '{}' to invert", name)))?;
        let values = col
            .values
            .iter()
            .map(|v| v.map(|y| yeo_johnson_inv(y, lambda)))
            .collect();
        out = out.with_column_values(name, values)?;
    }
    Ok(out)
}
