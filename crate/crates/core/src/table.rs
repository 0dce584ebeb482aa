//! Site-day tables: the long-format currency of the pipeline.
//!
//! A table holds one row per (site, date) with an optional monitor outcome
//! and any number of numeric, missing-capable covariate columns. Rows are
//! kept in canonical order — sorted by (date, site_id) — and every table is
//! immutable after construction; transformations produce new tables.

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Column name of the monitor outcome.
pub const OUTCOME_COLUMN: &str = "MonitorData";
/// Key column names in on-disk CSVs.
pub const SITE_COLUMN: &str = "site_id";
pub const DATE_COLUMN: &str = "date";

/// A monitored or prediction location.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteRecord {
    pub site_id: String,
    pub lon: f64,
    pub lat: f64,
}

impl SiteRecord {
    pub fn new(site_id: impl Into<String>, lon: f64, lat: f64) -> Result<Self> {
        let site_id = site_id.into();
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(Error::Data(format!(
                "site '{}': longitude {} outside [-180, 180]",
                site_id, lon
            )));
        }
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(Error::Data(format!(
                "site '{}': latitude {} outside [-90, 90]",
                site_id, lat
            )));
        }
        Ok(SiteRecord { site_id, lon, lat })
    }
}

/// One covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// Long-format table keyed by (site_id, date).
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDayTable {
    site_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    /// Present only when the table carries a MonitorData column.
    outcome: Option<Vec<Option<f64>>>,
    columns: Vec<Column>,
}

impl SiteDayTable {
    /// Build a table from parallel key vectors and columns. Rows are sorted
    /// into canonical (date, site_id) order and keys checked for uniqueness.
    pub fn new(
        site_ids: Vec<String>,
        dates: Vec<NaiveDate>,
        outcome: Option<Vec<Option<f64>>>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let n = site_ids.len();
        if dates.len() != n {
            return Err(Error::Data("site_id and date lengths differ".into()));
        }
        if let Some(o) = &outcome {
            if o.len() != n {
                return Err(Error::Data("outcome length differs from key length".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for col in &columns {
            if col.values.len() != n {
                return Err(Error::Data(format!(
                    "column '{}' has {} values for {} rows",
                    col.name,
                    col.values.len(),
                    n
                )));
            }
            if !seen.insert(col.name.clone()) {
                return Err(Error::Data(format!("duplicate column '{}'", col.name)));
            }
        }
        if seen.contains(OUTCOME_COLUMN) {
            return Err(Error::Data(format!(
                "'{}' must be the outcome, not a covariate column",
                OUTCOME_COLUMN
            )));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| (dates[a], &site_ids[a]).cmp(&(dates[b], &site_ids[b])));

        let table = SiteDayTable {
            site_ids: order.iter().map(|&i| site_ids[i].clone()).collect(),
            dates: order.iter().map(|&i| dates[i]).collect(),
            outcome: outcome.map(|o| order.iter().map(|&i| o[i]).collect()),
            columns: columns
                .into_iter()
                .map(|c| Column {
                    name: c.name,
                    values: order.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
        };
        table.check_unique_keys()?;
        Ok(table)
    }

    fn check_unique_keys(&self) -> Result<()> {
        for i in 1..self.n_rows() {
            if self.dates[i] == self.dates[i - 1] && self.site_ids[i] == self.site_ids[i - 1] {
                return Err(Error::Data(format!(
                    "duplicate key (site '{}', date {})",
                    self.site_ids[i], self.dates[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.site_ids.len()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn has_outcome(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn outcome(&self) -> Option<&[Option<f64>]> {
        self.outcome.as_deref()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Replace a covariate column's values, returning a new table.
    pub fn with_column_values(&self, name: &str, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::Data(format!("column '{}': wrong length", name)));
        }
        let mut t = self.clone();
        match t.columns.iter_mut().find(|c| c.name == name) {
            Some(col) => col.values = values,
            None => return Err(Error::Data(format!("no column '{}'", name))),
        }
        Ok(t)
    }

    /// Append a new covariate column, returning a new table.
    pub fn with_new_column(&self, name: &str, values: Vec<Option<f64>>) -> Result<Self> {
        if self.column(name).is_some() || name == OUTCOME_COLUMN {
            return Err(Error::Data(format!("column '{}' already exists", name)));
        }
        if values.len() != self.n_rows() {
            return Err(Error::Data(format!("column '{}': wrong length", name)));
        }
        let mut t = self.clone();
        t.columns.push(Column {
            name: name.to_string(),
            values,
        });
        Ok(t)
    }

    /// Count of missing cells across all covariate columns.
    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.values.iter().filter(|v| v.is_none()).count())
            .sum()
    }
}
