//! Second-stage spatial augmentation.
//!
//! Stage-1 predictions at other sites on the same calendar day are
//! IDW-weighted (k nearest, self excluded) into a `neighbor_pred` column, a
//! scalar summary of nearby pollution. A site alone on a day falls back to
//! its own stage-1 prediction. The augmented feature is min-max normalized
//! with the stage-1 training prediction range, recorded in the stage-2
//! metadata so prediction replays it.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolate::{idw_weights, SpatialIndex};
use crate::table::{SiteDayTable, SiteRecord};

pub const NEIGHBOR_COLUMN: &str = "neighbor_pred";
pub const STAGE2_DIR: &str = "stage2";
pub const META_FILE: &str = "meta.yml";

/// Add `neighbor_pred` from the prediction column of `table`.
pub fn augment_with_neighbor_predictions(
    table: &SiteDayTable,
    prediction_column: &str,
    sites: &[SiteRecord],
    k: usize,
    power: f64,
) -> Result<SiteDayTable> {
    let preds = table
        .column(prediction_column)
        .ok_or_else(|| Error::Train(format!("no prediction column '{}'", prediction_column)))?;
    let coords: HashMap<&str, (f64, f64)> = sites
        .iter()
        .map(|s| (s.site_id.as_str(), (s.lon, s.lat)))
        .collect();

    let n = table.n_rows();
    // contiguous day runs; rows are canonically sorted by (date, site)
    let mut day_ranges: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || table.dates()[i] != table.dates()[start] {
            day_ranges.push((start, i));
            start = i;
        }
    }
    if day_ranges.iter().all(|(s, e)| e - s < 2) {
        return Err(Error::Train(
            "every day has fewer than 2 sites; spatial augmentation impossible".into(),
        ));
    }
    for i in 0..n {
        if preds.values[i].is_none() {
            return Err(Error::Train(format!(
                "missing stage-1 prediction at (site '{}', {})",
                table.site_ids()[i],
                table.dates()[i]
            )));
        }
    }

    let per_day: Vec<Vec<f64>> = day_ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let rows: Vec<usize> = (lo..hi).collect();
            let points: Vec<(f64, f64)> = rows
                .iter()
                .map(|&i| {
                    coords
                        .get(table.site_ids()[i].as_str())
                        .copied()
                        .ok_or_else(|| {
                            Error::Train(format!(
                                "site '{}' is not in the site registry",
                                table.site_ids()[i]
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let values: Vec<f64> = rows.iter().map(|&i| preds.values[i].unwrap()).collect();
            if rows.len() < 2 {
                // no same-day neighbors: fall back to the own prediction
                return Ok(values);
            }
            let index = SpatialIndex::build(&points)?;
            Ok((0..rows.len())
                .map(|local| {
                    let neighbors = index.k_nearest(points[local], k, Some(local));
                    idw_weights(&neighbors, power)
                        .iter()
                        .map(|&(j, w)| w * values[j])
                        .sum()
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut neighbor = vec![None; n];
    for ((lo, hi), day_values) in day_ranges.into_iter().zip(per_day) {
        for (offset, value) in (lo..hi).zip(day_values) {
            neighbor[offset] = Some(value);
        }
    }
    table.with_new_column(NEIGHBOR_COLUMN, neighbor)
}

/// Stage-2 replay metadata: the normalization range for `neighbor_pred`
/// (taken from stage-1 training predictions) plus the spatial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Meta {
    pub format_version: u32,
    pub neighbor_min: f64,
    pub neighbor_max: f64,
    pub neighbor_constant: bool,
    pub neighbor_count: usize,
    pub idw_power: f64,
}

impl Stage2Meta {
    pub fn from_range(values: &[f64], neighbor_count: usize, idw_power: f64) -> Self {
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        Stage2Meta {
            format_version: 1,
            neighbor_min: min,
            neighbor_max: max,
            neighbor_constant: max == min,
            neighbor_count,
            idw_power,
        }
    }

    pub fn normalize(&self, value: f64) -> f64 {
        if self.neighbor_constant {
            0.5
        } else {
            (value - self.neighbor_min) / (self.neighbor_max - self.neighbor_min)
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(META_FILE);
        let text = serde_yaml::to_string(self).map_err(|e| Error::Yaml {
            path: path.clone(),
            message: e.to_string(),
        })?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_yaml::from_str(&text).map_err(|e| Error::Yaml {
            path,
            message: e.to_string(),
        })
    }
}
