//! Reading and writing site-day tables.
//!
//! Tables arrive either as a long-format CSV (`site_id,date,MonitorData,...`)
//! or as an on-disk tree of per-variable matrices
//! (`root/<variable>/values.csv` + `root/<variable>/manifest.yml`).
//! Intermediate datasets are checkpointed as CSV with round-trip-exact
//! decimal formatting; missing values are empty fields, never sentinels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::table::{Column, SiteDayTable, SiteRecord, DATE_COLUMN, OUTCOME_COLUMN, SITE_COLUMN};

/// Conventional name of the site registry file (sibling of the data CSV, or
/// directly under a matrix-tree root).
pub const SITES_FILE: &str = "sites.csv";

/// Parse a date in ISO-8601 (`YYYY-MM-DD`) or US `MM/DD/YYYY` style.
pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y"))
        .map_err(|_| Error::Data(format!("unparseable date '{}'", s)))
}

/// Shortest decimal representation that parses back to the same f64.
pub fn format_value(v: f64) -> String {
    format!("{}", v)
}

fn is_site_header(name: &str) -> bool {
    let n = name.trim();
    n.eq_ignore_ascii_case(SITE_COLUMN) || n.eq_ignore_ascii_case("site no.")
}

fn is_date_header(name: &str) -> bool {
    name.trim().eq_ignore_ascii_case(DATE_COLUMN)
}

/// Read a long-format site-day CSV.
pub fn read_csv_data(csv_path: &Path) -> Result<SiteDayTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| Error::Data(format!("{}: {}", csv_path.display(), e)))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {}", csv_path.display(), e)))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let site_idx = headers
        .iter()
        .position(|h| is_site_header(h))
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: missing key column 'site_id'",
                csv_path.display()
            ))
        })?;
    let date_idx = headers
        .iter()
        .position(|h| is_date_header(h))
        .ok_or_else(|| Error::Data(format!("{}: missing key column 'date'", csv_path.display())))?;
    let outcome_idx = headers.iter().position(|h| h == OUTCOME_COLUMN);

    let covariate_indices: Vec<usize> = (0..headers.len())
        .filter(|&i| i != site_idx && i != date_idx && Some(i) != outcome_idx)
        .collect();
    if covariate_indices.is_empty() && outcome_idx.is_none() {
        return Err(Error::Data(format!(
            "{}: no data columns beyond the keys",
            csv_path.display()
        )));
    }

    let mut site_ids = Vec::new();
    let mut dates = Vec::new();
    let mut outcome: Vec<Option<f64>> = Vec::new();
    let mut columns: Vec<Column> = covariate_indices
        .iter()
        .map(|&i| Column {
            name: headers[i].clone(),
            values: Vec::new(),
        })
        .collect();

    for (row_number, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {}", csv_path.display(), e)))?;
        let line = row_number + 2; // header is line 1
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        site_ids.push(get(site_idx).to_string());
        dates
            .push(parse_date(get(date_idx)).map_err(|e| {
                Error::Data(format!("{} line {}: {}", csv_path.display(), line, e))
            })?);
        if let Some(oi) = outcome_idx {
            outcome.push(parse_cell(get(oi)).map_err(|_| {
                Error::Data(format!(
                    "{} line {} column '{}': unparseable numeric cell '{}'",
                    csv_path.display(),
                    line,
                    OUTCOME_COLUMN,
                    get(oi)
                ))
            })?);
        }
        for (col, &i) in columns.iter_mut().zip(&covariate_indices) {
            col.values.push(parse_cell(get(i)).map_err(|_| {
                Error::Data(format!(
                    "{} line {} column '{}': unparseable numeric cell '{}'",
                    csv_path.display(),
                    line,
                    headers[i],
                    get(i)
                ))
            })?);
        }
    }

    SiteDayTable::new(site_ids, dates, outcome_idx.map(|_| outcome), columns)
}

fn parse_cell(s: &str) -> std::result::Result<Option<f64>, ()> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

/// Write a table as CSV: keys first, MonitorData when present, covariates in
/// table order. Missing values are empty fields.
pub fn write_table_csv(table: &SiteDayTable, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut writer = csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;

    let mut header = vec![SITE_COLUMN.to_string(), DATE_COLUMN.to_string()];
    if table.has_outcome() {
        header.push(OUTCOME_COLUMN.to_string());
    }
    header.extend(table.column_names());
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;

    for row in 0..table.n_rows() {
        let mut record = vec![
            table.site_ids()[row].clone(),
            table.dates()[row].format("%Y-%m-%d").to_string(),
        ];
        if let Some(outcome) = table.outcome() {
            record.push(outcome[row].map(format_value).unwrap_or_default());
        }
        for col in table.columns() {
            record.push(col.values[row].map(format_value).unwrap_or_default());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a site registry CSV (`site_id,lon,lat`).
pub fn read_sites(path: &Path) -> Result<Vec<SiteRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    let mut sites = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
        let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let site_id = get(0);
        let lon: f64 = get(1).parse().map_err(|_| {
            Error::Data(format!(
                "{}: bad longitude for site '{}'",
                path.display(),
                site_id
            ))
        })?;
        let lat: f64 = get(2).parse().map_err(|_| {
            Error::Data(format!(
                "{}: bad latitude for site '{}'",
                path.display(),
                site_id
            ))
        })?;
        if !seen.insert(site_id.clone()) {
            return Err(Error::Data(format!(
                "{}: duplicate site '{}'",
                path.display(),
                site_id
            )));
        }
        sites.push(SiteRecord::new(site_id, lon, lat)?);
    }
    if sites.is_empty() {
        return Err(Error::Data(format!("{}: no sites", path.display())));
    }
    Ok(sites)
}

pub fn write_sites(sites: &[SiteRecord], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = String::from("site_id,lon,lat\n");
    for s in sites {
        out.push_str(&format!(
            "{},{},{}\n",
            s.site_id,
            format_value(s.lon),
            format_value(s.lat)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct VariableManifest {
    variable: String,
    sites: Vec<String>,
    dates: Vec<String>,
}

/// Assemble a site-day table from a tree of per-variable matrices.
///
/// Layout: `root/<variable>/values.csv` (rows = sites in registry order,
/// columns = dates from the sidecar) plus `root/<variable>/manifest.yml`.
/// Calendar dates a variable never observed become missing cells.
pub fn assemble_from_matrices(
    root: &Path,
    registry: &[SiteRecord],
    calendar: &[NaiveDate],
) -> Result<SiteDayTable> {
    if registry.is_empty() {
        return Err(Error::Data("empty site registry".into()));
    }
    if calendar.is_empty() {
        return Err(Error::Data("empty calendar".into()));
    }
    let mut variable_dirs: Vec<PathBuf> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("manifest.yml").exists() {
            variable_dirs.push(path);
        }
    }
    if variable_dirs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no variable directories (empty tree)",
            root.display()
        )));
    }
    // deterministic merge order
    variable_dirs.sort();

    let loaded: Vec<(String, Vec<Vec<Option<f64>>>, Vec<NaiveDate>)> = variable_dirs
        .par_iter()
        .map(|dir| load_variable(dir, registry))
        .collect::<Result<Vec<_>>>()?;

    let mut names = std::collections::HashSet::new();
    for (name, _, _) in &loaded {
        if !names.insert(name.clone()) {
            return Err(Error::Data(format!("overlapping variable name '{}'", name)));
        }
    }

    let n_rows = registry.len() * calendar.len();
    let mut site_ids = Vec::with_capacity(n_rows);
    let mut dates = Vec::with_capacity(n_rows);
    for date in calendar {
        for site in registry {
            site_ids.push(site.site_id.clone());
            dates.push(*date);
        }
    }

    let mut outcome: Option<Vec<Option<f64>>> = None;
    let mut columns: Vec<Column> = Vec::new();
    for (name, matrix, var_dates) in loaded {
        let date_index: BTreeMap<NaiveDate, usize> =
            var_dates.iter().enumerate().map(|(j, d)| (*d, j)).collect();
        let mut values = Vec::with_capacity(n_rows);
        for date in calendar {
            let col_j = date_index.get(date);
            for (site_i, _) in registry.iter().enumerate() {
                values.push(col_j.and_then(|&j| matrix[site_i][j]));
            }
        }
        // a variable named like the outcome becomes the outcome column
        if name == OUTCOME_COLUMN {
            outcome = Some(values);
        } else {
            columns.push(Column { name, values });
        }
    }

    SiteDayTable::new(site_ids, dates, outcome, columns)
}

fn load_variable(
    dir: &Path,
    registry: &[SiteRecord],
) -> Result<(String, Vec<Vec<Option<f64>>>, Vec<NaiveDate>)> {
    let manifest_path = dir.join("manifest.yml");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: VariableManifest = serde_yaml::from_str(&text).map_err(|e| Error::Yaml {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;

    if manifest.sites.len() != registry.len()
        || manifest
            .sites
            .iter()
            .zip(registry)
            .any(|(a, b)| a != &b.site_id)
    {
        return Err(Error::Data(format!(
            "variable '{}': site order does not match the registry",
            manifest.variable
        )));
    }
    let var_dates: Vec<NaiveDate> = manifest
        .dates
        .iter()
        .map(|d| parse_date(d))
        .collect::<Result<Vec<_>>>()?;

    let values_path = dir.join("values.csv");
    let content = std::fs::read_to_string(&values_path).map_err(|e| Error::io(&values_path, e))?;
    let mut matrix: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let row: Vec<Option<f64>> = line
            .split(',')
            .map(|cell| {
                parse_cell(cell.trim()).map_err(|_| {
                    Error::Data(format!(
                        "{} row {}: unparseable numeric cell '{}'",
                        values_path.display(),
                        i + 1,
                        cell
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != var_dates.len() {
            return Err(Error::Data(format!(
                "variable '{}' row {}: {} columns for {} dates",
                manifest.variable,
                i + 1,
                row.len(),
                var_dates.len()
            )));
        }
        matrix.push(row);
    }
    if matrix.len() != registry.len() {
        return Err(Error::Data(format!(
            "variable '{}': {} matrix rows for {} registry sites",
            manifest.variable,
            matrix.len(),
            registry.len()
        )));
    }
    Ok((manifest.variable, matrix, var_dates))
}

/// The contiguous calendar spanning every variable manifest in a matrix tree.
pub fn matrix_tree_calendar(root: &Path) -> Result<Vec<NaiveDate>> {
    let mut lo: Option<NaiveDate> = None;
    let mut hi: Option<NaiveDate> = None;
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let manifest_path = entry.path().join("manifest.yml");
        if !manifest_path.exists() {
            continue;
        }
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: VariableManifest = serde_yaml::from_str(&text).map_err(|e| Error::Yaml {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
        for d in &manifest.dates {
            let date = parse_date(d)?;
            lo = Some(lo.map_or(date, |v| v.min(date)));
            hi = Some(hi.map_or(date, |v| v.max(date)));
        }
    }
    match (lo, hi) {
        (Some(lo), Some(hi)) => {
            let mut calendar = Vec::new();
            let mut d = lo;
            while d <= hi {
                calendar.push(d);
                d = d.succ_opt().expect("date overflow");
            }
            Ok(calendar)
        }
        _ => Err(Error::Data(format!(
            "{}: no variable directories (empty tree)",
            root.display()
        ))),
    }
}

/// Write `<stage_name>.csv` under `dir` and record the event in the run
/// manifest when one is attached. Re-checkpointing a stage overwrites the
/// file; the manifest keeps both events.
pub fn save_checkpoint(
    table: &SiteDayTable,
    stage_name: &str,
    dir: &Path,
    root: &Path,
    manifest: Option<&mut RunManifest>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{}.csv", stage_name));
    write_table_csv(table, &path)?;
    if let Some(m) = manifest {
        m.record_checkpoint(root, &path)?;
    }
    Ok(path)
}
