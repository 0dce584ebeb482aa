//! Model-based imputation of missing covariates.
//!
//! Per missing-capable variable: ridge regression on the other covariates
//! plus a shrunken per-site mean offset, approximating a random-intercept
//! mixed model. The outcome column is never imputed and never used as a
//! predictor. Filling walks variables alphabetically; predictors that are
//! still missing read as their training median, so the fill is a pure
//! function of the stored model set.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::table::SiteDayTable;

pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Site offsets are shrunk by n / (n + SHRINKAGE_PRIOR).
pub const SHRINKAGE_PRIOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationModel {
    pub variable: String,
    pub intercept: f64,
    /// Ordered (predictor, coefficient) pairs.
    pub coefficients: Vec<(String, f64)>,
    pub ridge_penalty: f64,
    pub site_offsets: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImputationModelSet {
    /// Training median per covariate, the initialization value for missing
    /// predictor cells.
    pub medians: BTreeMap<String, f64>,
    /// One model per variable that had missingness at fit time, keyed by name.
    pub models: BTreeMap<String, ImputationModel>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Fit imputation models. `predictors` is the candidate pool (normally every
/// covariate column); the outcome never appears because it is not a covariate.
pub fn fit_impute(
    table: &SiteDayTable,
    predictors: &[String],
    ridge: f64,
) -> Result<ImputationModelSet> {
    for name in predictors {
        if table.column(name).is_none() {
            return Err(Error::Preprocess(format!("no column '{}'", name)));
        }
    }
    let has_complete = predictors.iter().any(|name| {
        table
            .column(name)
            .map(|c| c.values.iter().all(|v| v.is_some()))
            .unwrap_or(false)
    });
    if !has_complete {
        return Err(Error::Preprocess(
            "imputation needs at least one complete predictor column".into(),
        ));
    }

    let mut medians = BTreeMap::new();
    for name in predictors {
        let observed: Vec<f64> = table
            .column(name)
            .unwrap()
            .values
            .iter()
            .filter_map(|v| *v)
            .collect();
        if observed.is_empty() {
            return Err(Error::Preprocess(format!(
                "column '{}' is all-missing",
                name
            )));
        }
        medians.insert(name.clone(), median(observed));
    }

    // median-initialized working matrix, one vector per predictor
    let working: BTreeMap<String, Vec<f64>> = predictors
        .iter()
        .map(|name| {
            let med = medians[name];
            let values = table
                .column(name)
                .unwrap()
                .values
                .iter()
                .map(|v| v.unwrap_or(med))
                .collect();
            (name.clone(), values)
        })
        .collect();

    let targets: Vec<String> = {
        let mut t: Vec<String> = predictors
            .iter()
            .filter(|name| {
                table
                    .column(name)
                    .unwrap()
                    .values
                    .iter()
                    .any(|v| v.is_none())
            })
            .cloned()
            .collect();
        t.sort();
        t
    };

    let models: Vec<(String, ImputationModel)> = targets
        .par_iter()
        .map(|target| {
            let model = fit_one(table, predictors, &working, target, ridge)?;
            Ok((target.clone(), model))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ImputationModelSet {
        medians,
        models: models.into_iter().collect(),
    })
}

fn fit_one(
    table: &SiteDayTable,
    predictors: &[String],
    working: &BTreeMap<String, Vec<f64>>,
    target: &str,
    ridge: f64,
) -> Result<ImputationModel> {
    let mut preds: Vec<String> = predictors
        .iter()
        .filter(|p| *p != target)
        .cloned()
        .collect();
    preds.sort();
    let target_col = &table.column(target).unwrap().values;

    let rows: Vec<usize> = (0..table.n_rows())
        .filter(|&i| target_col[i].is_some())
        .collect();
    let n = rows.len();
    let p = preds.len();
    if n == 0 {
        return Err(Error::Preprocess(format!(
            "column '{}' is all-missing",
            target
        )));
    }

    let y: Vec<f64> = rows.iter().map(|&i| target_col[i].unwrap()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let (beta, x_means): (Vec<f64>, Vec<f64>) = if p == 0 {
        (Vec::new(), Vec::new())
    } else {
        let cols: Vec<&Vec<f64>> = preds.iter().map(|name| &working[name]).collect();
        let x_means: Vec<f64> = cols
            .iter()
            .map(|col| rows.iter().map(|&i| col[i]).sum::<f64>() / n as f64)
            .collect();
        // centered normal equations: (Xc'Xc + ridge I) beta = Xc'yc
        let mut xtx = vec![vec![0.0; p]; p];
        let mut xty = vec![0.0; p];
        for &i in &rows {
            let yc = target_col[i].unwrap() - y_mean;
            for a in 0..p {
                let xa = cols[a][i] - x_means[a];
                xty[a] += xa * yc;
                for b in a..p {
                    let xb = cols[b][i] - x_means[b];
                    xtx[a][b] += xa * xb;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtx[a][b] = xtx[b][a];
            }
            xtx[a][a] += ridge;
        }
        (solve_spd(&xtx, &xty)?, x_means)
    };

    let intercept = y_mean - beta.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();

    // shrunken per-site mean residual
    let mut by_site: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for &i in &rows {
        let mut fitted = intercept;
        for (a, name) in preds.iter().enumerate() {
            fitted += beta[a] * working[name][i];
        }
        let residual = target_col[i].unwrap() - fitted;
        let entry = by_site
            .entry(table.site_ids()[i].clone())
            .or_insert((0.0, 0));
        entry.0 += residual;
        entry.1 += 1;
    }
    let site_offsets: BTreeMap<String, f64> = by_site
        .into_iter()
        .map(|(site, (sum, count))| {
            let mean = sum / count as f64;
            let w = count as f64 / (count as f64 + SHRINKAGE_PRIOR);
            (site, w * mean)
        })
        .collect();

    Ok(ImputationModel {
        variable: target.to_string(),
        intercept,
        coefficients: preds.into_iter().zip(beta).collect(),
        ridge_penalty: ridge,
        site_offsets,
    })
}

/// Fill missing cells from the stored models. Observed cells are never
/// altered; applying twice equals applying once.
pub fn apply_impute(table: &SiteDayTable, set: &ImputationModelSet) -> Result<SiteDayTable> {
    let mut out = table.clone();
    // working values with median fallback for still-missing predictors
    let mut working: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, med) in &set.medians {
        if let Some(col) = out.column(name) {
            working.insert(
                name.clone(),
                col.values.iter().map(|v| v.unwrap_or(*med)).collect(),
            );
        }
    }

    for (variable, model) in &set.models {
        let col = match out.column(variable) {
            Some(c) => c,
            None => continue,
        };
        if col.values.iter().all(|v| v.is_some()) {
            continue;
        }
        let mut values = col.values.clone();
        let mut filled = working
            .get(variable)
            .cloned()
            .ok_or_else(|| Error::Preprocess(format!("no working column '{}'", variable)))?;
        for i in 0..values.len() {
            if values[i].is_some() {
                continue;
            }
            let mut pred = model.intercept;
            for (name, coef) in &model.coefficients {
                let v = working
                    .get(name)
                    .map(|w| w[i])
                    .or_else(|| set.medians.get(name).copied())
                    .ok_or_else(|| {
                        Error::Preprocess(format!("predictor '{}' absent at apply time", name))
                    })?;
                pred += coef * v;
            }
            if let Some(offset) = model.site_offsets.get(&out.site_ids()[i]) {
                pred += offset;
            }
            values[i] = Some(pred);
            filled[i] = pred;
        }
        working.insert(variable.clone(), filled);
        out = out.with_column_values(variable, values)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;
    use chrono::NaiveDate;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2000, 1, d).unwrap()
    }

    fn table_with(columns: Vec<Column>, n: usize) -> SiteDayTable {
        let site_ids: Vec<String> = (0..n).map(|i| format!("s{:02}", i % 4)).collect();
        let dates: Vec<NaiveDate> = (0..n).map(|i| day(1 + (i / 4) as u32)).collect();
        SiteDayTable::new(site_ids, dates, None, columns).unwrap()
    }

    #[test]
    fn no_missingness_is_identity() {
        let t = table_with(
            vec![
                Column {
                    name: "a".into(),
                    values: (0..8).map(|i| Some(i as f64)).collect(),
                },
                Column {
                    name: "b".into(),
                    values: (0..8).map(|i| Some(2.0 * i as f64)).collect(),
                },
            ],
            8,
        );
        let set = fit_impute(&t, &t.column_names(), DEFAULT_RIDGE).unwrap();
        assert!(set.models.is_empty());
        let out = apply_impute(&t, &set).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn exact_linear_relation_recovered() {
        // b = 2a exactly, one b cell missing, tiny ridge
        let n = 12;
        let a_vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 2.0).collect();
        let mut b_vals: Vec<Option<f64>> = a_vals.iter().map(|&a| Some(2.0 * a)).collect();
        b_vals[5] = None;
        let t = table_with(
            vec![
                Column {
                    name: "a".into(),
                    values: a_vals.iter().map(|&v| Some(v)).collect(),
                },
                Column {
                    name: "b".into(),
                    values: b_vals,
                },
            ],
            n,
        );
        let set = fit_impute(&t, &t.column_names(), 1e-8).unwrap();
        let out = apply_impute(&t, &set).unwrap();
        // the sort put row 5's key where? locate by value of a
        let a_col = &out.column("a").unwrap().values;
        let b_col = &out.column("b").unwrap().values;
        for i in 0..n {
            let expected = 2.0 * a_col[i].unwrap();
            let got = b_col[i].unwrap();
            assert!(
                (got - expected).abs() < 1e-6,
                "row {}: {} vs {}",
                i,
                got,
                expected
            );
        }
    }

    /// Closed-form least-squares oracle for the single-predictor case.
    #[test]
    fn matches_closed_form_regression_oracle() {
        let n = 16;
        let a_vals: Vec<f64> = (0..n)
            .map(|i| (i as f64).sin() * 3.0 + i as f64 * 0.1)
            .collect();
        let b_true: Vec<f64> = a_vals.iter().map(|&a| 1.5 * a - 0.7).collect();
        let mut b_vals: Vec<Option<f64>> = b_true.iter().map(|&v| Some(v)).collect();
        b_vals[3] = None;
        b_vals[11] = None;
        let t = table_with(
            vec![
                Column {
                    name: "a".into(),
                    values: a_vals.iter().map(|&v| Some(v)).collect(),
                },
                Column {
                    name: "b".into(),
                    values: b_vals.clone(),
                },
            ],
            n,
        );
        let ridge = 1e-8;
        let set = fit_impute(&t, &t.column_names(), ridge).unwrap();
        let model = &set.models["b"];

        // oracle: centered simple regression with the same ridge
        let rows: Vec<usize> = (0..n).filter(|&i| b_vals[i].is_some()).collect();
        // note: table sorting preserves (site,date) generation order here
        let xs: Vec<f64> = rows.iter().map(|&i| a_vals[i]).collect();
        let ys: Vec<f64> = rows.iter().map(|&i| b_true[i]).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let beta = sxy / (sxx + ridge);
        let intercept = ym - beta * xm;

        assert!((model.coefficients[0].1 - beta).abs() < 1e-9);
        assert!((model.intercept - intercept).abs() < 1e-9);
    }

    #[test]
    fn apply_is_idempotent() {
        let n = 12;
        let t = table_with(
            vec![
                Column {
                    name: "a".into(),
                    values: (0..n).map(|i| Some(i as f64)).collect(),
                },
                Column {
                    name: "b".into(),
                    values: (0..n)
                        .map(|i| {
                            if i % 5 == 0 {
                                None
                            } else {
                                Some(3.0 * i as f64 + 1.0)
                            }
                        })
                        .collect(),
                },
            ],
            n,
        );
        let set = fit_impute(&t, &t.column_names(), DEFAULT_RIDGE).unwrap();
        let once = apply_impute(&t, &set).unwrap();
        let twice = apply_impute(&once, &set).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.missing_count(), 0);
    }

    #[test]
    fn observed_cells_never_altered() {
        let n = 8;
        let original: Vec<Option<f64>> = (0..n)
            .map(|i| if i == 2 { None } else { Some(i as f64 * 7.0) })
            .collect();
        let t = table_with(
            vec![
                Column {
                    name: "a".into(),
                    values: (0..n).map(|i| Some(i as f64)).collect(),
                },
                Column {
                    name: "b".into(),
                    values: original.clone(),
                },
            ],
            n,
        );
        let set = fit_impute(&t, &t.column_names(), DEFAULT_RIDGE).unwrap();
        let out = apply_impute(&t, &set).unwrap();
        for (before, after) in original.iter().zip(&out.column("b").unwrap().values) {
            if let Some(v) = before {
                assert_eq!(after.unwrap(), *v);
            }
        }
    }

    #[test]
    fn no_complete_predictor_is_an_error() {
        let t = table_with(
            vec![
                Column {
                    name: "a".into(),
                    values: vec![Some(1.0), None, Some(3.0), Some(4.0)],
                },
                Column {
                    name: "b".into(),
                    values: vec![None, Some(2.0), Some(3.0), Some(4.0)],
                },
            ],
            4,
        );
        let err = fit_impute(&t, &t.column_names(), DEFAULT_RIDGE).unwrap_err();
        assert!(err.to_string().contains("complete predictor"));
    }

    #[test]
    fn zero_variance_design_is_not_an_error() {
        let t = table_with(
            vec![
                Column {
                    name: "a".into(),
                    values: vec![Some(5.0); 8],
                },
                Column {
                    name: "b".into(),
                    values: (0..8)
                        .map(|i| if i == 0 { None } else { Some(i as f64) })
                        .collect(),
                },
            ],
            8,
        );
        let set = fit_impute(&t, &t.column_names(), DEFAULT_RIDGE).unwrap();
        let out = apply_impute(&t, &set).unwrap();
        assert_eq!(out.missing_count(), 0);
    }
}
