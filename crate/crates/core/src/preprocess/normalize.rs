//! Min-max normalization to [0, 1] on training data.
//!
//! Constant columns map to 0.5 and are flagged. Values outside the training
//! range at apply time are NOT clipped and may land outside [0, 1].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::table::SiteDayTable;

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizationParams {
    pub ranges: BTreeMap<String, ColumnRange>,
}

pub fn scale_value(x: f64, range: &ColumnRange) -> f64 {
    if range.constant {
        0.5
    } else {
        (x - range.min) / (range.max - range.min)
    }
}

pub fn unscale_value(u: f64, range: &ColumnRange) -> f64 {
    if range.constant {
        range.min
    } else {
        u * (range.max - range.min) + range.min
    }
}

pub fn fit_normalize(table: &SiteDayTable, variables: &[String]) -> Result<NormalizationParams> {
    let mut ranges = BTreeMap::new();
    for name in variables {
        let col = table
            .column(name)
            .ok_or_else(|| Error::Preprocess(format!("no column '{}'", name)))?;
        let observed: Vec<f64> = col.values.iter().filter_map(|v| *v).collect();
        if observed.is_empty() {
            return Err(Error::Preprocess(format!(
                "column '{}' is all-missing",
                name
            )));
        }
        let min = observed.iter().cloned().fold(f64::MAX, f64::min);
        let max = observed.iter().cloned().fold(f64::MIN, f64::max);
        ranges.insert(
            name.clone(),
            ColumnRange {
                min,
                max,
                constant: max == min,
            },
        );
    }
    Ok(NormalizationParams { ranges })
}

pub fn apply_normalize(table: &SiteDayTable, params: &NormalizationParams) -> Result<SiteDayTable> {
    let mut out = table.clone();
    for (name, range) in &params.ranges {
        let col = out
            .column(name)
            .ok_or_else(|| Error::Preprocess(format!("no column '{}' to normalize", name)))?;
        let values = col
            .values
            .iter()
            .map(|v| v.map(|x| scale_value(x, range)))
            .collect();
        out = out.with_column_values(name, values)?;
    }
    Ok(out)
}

pub fn invert_normalize(
    table: &SiteDayTable,
    params: &NormalizationParams,
) -> Result<SiteDayTable> {
    let mut out = table.clone();
    for (name, range) in &params.ranges {
        let col = out
            .column(name)
            .ok_or_else(|| Error::Preprocess(format!("no column '{}' to denormalize", name)))?;
        let values = col
            .values
            .iter()
            .map(|v| v.map(|u| unscale_value(u, range)))
            .collect();
        out = out.with_column_values(name, values)?;
    }
    Ok(out)
}
