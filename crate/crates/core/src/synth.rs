//! Synthetic site-day data for tests, demos, and the end-to-end benchmark.
//!
//! The standard generator documents its formulas so the achievable R^2 is
//! computable from first principles:
//!
//! * sites are uniform in the 2 x 2 degree box lon in [-71, -69],
//!   lat in [42, 44]; each site carries an effect ~ N(0, 1)
//! * latent field  f(site, t) = 10 + 3 sin(2 pi t / 365)
//!   + 2 sin(3 lon) + 2 cos(3 lat) + site_effect
//! * MonitorData = f + N(0, noise_sd^2), so the R^2 ceiling of any model of
//!   f is Var(f) / (Var(f) + noise_sd^2)
//! * covariates (noisy views of f plus distractors):
//!   cov_lin  = 0.9 f + N(0, 0.8^2)
//!   cov_sq   = 0.05 (f - 10)^2 + N(0, 0.4^2)
//!   cov_exp  = exp(f / 8) + N(0, 0.3^2)
//!   cov_seas = sin(2 pi t / 365) + N(0, 0.2^2)
//!   dist_a ~ N(0, 1), dist_b ~ U(0, 1)
//! * 15% of cov_lin is masked missing completely at random
//!
//! The spatial-residual generator drops the site effect and gives the field
//! long-wavelength spatial structure observed only through noisy covariates:
//!
//! * F(site, t) = 10 + 1.5 sin(2 pi t / 365) + 3 sin(1.5 lon) + 3 cos(1.5 lat)
//! * MonitorData = F + N(0, noise_sd^2)
//! * cov_1..cov_3 = F + N(0, 2^2) each; dist_a ~ N(0, 1)
//!
//! Stage-1 prediction error there is dominated by i.i.d. covariate noise, so
//! averaging neighbors' stage-1 predictions over a smooth field carries real
//! signal — the setting where second-stage training should win.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ingest::{write_sites, write_table_csv, SITES_FILE};
use crate::rng::{derive_seed, seeded_rng};
use crate::table::{Column, SiteDayTable, SiteRecord};

const LON_ORIGIN: f64 = -71.0;
const LAT_ORIGIN: f64 = 42.0;
const BOX_DEGREES: f64 = 2.0;
const MISSING_FRACTION: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_sites: usize,
    pub n_days: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

pub struct SynthData {
    pub table: SiteDayTable,
    pub sites: Vec<SiteRecord>,
    /// Latent field value per row, in the table's canonical row order.
    pub latent: Vec<f64>,
}

fn validate(spec: &SynthSpec) -> Result<()> {
    if spec.n_sites < 2 {
        return Err(Error::Config("synth: n_sites must be >= 2".into()));
    }
    if spec.n_days < 1 {
        return Err(Error::Config("synth: n_days must be >= 1".into()));
    }
    if !(spec.noise_sd >= 0.0) || !spec.noise_sd.is_finite() {
        return Err(Error::Config(
            "synth: noise_sd must be a nonnegative real".into(),
        ));
    }
    Ok(())
}

fn make_sites(rng: &mut rand_chacha::ChaCha8Rng, n_sites: usize) -> Vec<(SiteRecord, f64)> {
    (0..n_sites)
        .map(|i| {
            let lon = LON_ORIGIN + BOX_DEGREES * rng.random_range(0.0..1.0);
            let lat = LAT_ORIGIN + BOX_DEGREES * rng.random_range(0.0..1.0);
            let effect: f64 = StandardNormal.sample(rng);
            (
                SiteRecord::new(format!("s{:04}", i), lon, lat).expect("box is in range"),
                effect,
            )
        })
        .collect()
}

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2012, 1, 1).unwrap()
}

pub fn latent_field(lon: f64, lat: f64, day_index: usize, site_effect: f64) -> f64 {
    10.0 + 3.0 * (TAU * day_index as f64 / 365.0).sin()
        + 2.0 * (3.0 * lon).sin()
        + 2.0 * (3.0 * lat).cos()
        + site_effect
}

pub fn spatial_field(lon: f64, lat: f64, day_index: usize) -> f64 {
    10.0 + 1.5 * (TAU * day_index as f64 / 365.0).sin()
        + 3.0 * (1.5 * lon).sin()
        + 3.0 * (1.5 * lat).cos()
}

/// The standard generator (documented above).
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    validate(spec)?;
    let mut rng = seeded_rng(derive_seed(spec.seed, "synth"));
    let sites = make_sites(&mut rng, spec.n_sites);

    let n = spec.n_sites * spec.n_days;
    let mut site_ids = Vec::with_capacity(n);
    let mut dates = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut cov_lin = Vec::with_capacity(n);
    let mut cov_sq = Vec::with_capacity(n);
    let mut cov_exp = Vec::with_capacity(n);
    let mut cov_seas = Vec::with_capacity(n);
    let mut dist_a = Vec::with_capacity(n);
    let mut dist_b = Vec::with_capacity(n);

    // rows generated in canonical (date, site) order; site ids are
    // zero-padded so lexicographic order matches generation order
    for t in 0..spec.n_days {
        let date = start_date() + chrono::Days::new(t as u64);
        for (record, effect) in &sites {
            let f = latent_field(record.lon, record.lat, t, *effect);
            let z = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
            site_ids.push(record.site_id.clone());
            dates.push(date);
            outcome.push(Some(f + spec.noise_sd * z(&mut rng)));
            latent.push(f);
            let lin = 0.9 * f + 0.8 * z(&mut rng);
            cov_sq.push(Some(0.05 * (f - 10.0).powi(2) + 0.4 * z(&mut rng)));
            cov_exp.push(Some((f / 8.0).exp() + 0.3 * z(&mut rng)));
            cov_seas.push(Some((TAU * t as f64 / 365.0).sin() + 0.2 * z(&mut rng)));
            dist_a.push(Some(z(&mut rng)));
            dist_b.push(Some(rng.random_range(0.0..1.0)));
            let masked = rng.random_range(0.0..1.0) < MISSING_FRACTION;
            cov_lin.push(if masked { None } else { Some(lin) });
        }
    }

    let table = SiteDayTable::new(
        site_ids,
        dates,
        Some(outcome),
        vec![
            Column {
                name: "cov_lin".into(),
                values: cov_lin,
            },
            Column {
                name: "cov_sq".into(),
                values: cov_sq,
            },
            Column {
                name: "cov_exp".into(),
                values: cov_exp,
            },
            Column {
                name: "cov_seas".into(),
                values: cov_seas,
            },
            Column {
                name: "dist_a".into(),
                values: dist_a,
            },
            Column {
                name: "dist_b".into(),
                values: dist_b,
            },
        ],
    )?;
    Ok(SynthData {
        table,
        sites: sites.into_iter().map(|(r, _)| r).collect(),
        latent,
    })
}

/// The spatial-residual generator (documented above).
pub fn generate_spatial(spec: &SynthSpec) -> Result<SynthData> {
    validate(spec)?;
    let mut rng = seeded_rng(derive_seed(spec.seed, "synth-spatial"));
    let sites = make_sites(&mut rng, spec.n_sites);

    let n = spec.n_sites * spec.n_days;
    let mut site_ids = Vec::with_capacity(n);
    let mut dates = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut covs: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n); 3];
    let mut dist_a = Vec::with_capacity(n);

    for t in 0..spec.n_days {
        let date = start_date() + chrono::Days::new(t as u64);
        for (record, _) in &sites {
            let f = spatial_field(record.lon, record.lat, t);
            let z = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
            site_ids.push(record.site_id.clone());
            dates.push(date);
            outcome.push(Some(f + spec.noise_sd * z(&mut rng)));
            latent.push(f);
            for cov in covs.iter_mut() {
                cov.push(Some(f + 2.0 * z(&mut rng)));
            }
            dist_a.push(Some(z(&mut rng)));
        }
    }

    let mut columns: Vec<Column> = covs
        .into_iter()
        .enumerate()
        .map(|(j, values)| Column {
            name: format!("cov_{}", j + 1),
            values,
        })
        .collect();
    columns.push(Column {
        name: "dist_a".into(),
        values: dist_a,
    });

    let table = SiteDayTable::new(site_ids, dates, Some(outcome), columns)?;
    Ok(SynthData {
        table,
        sites: sites.into_iter().map(|(r, _)| r).collect(),
        latent,
    })
}

/// Write `data.csv` and `sites.csv` under `out_dir`.
pub fn write_dataset(data: &SynthData, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("data.csv");
    write_table_csv(&data.table, &csv_path)?;
    let sites_path = out_dir.join(SITES_FILE);
    write_sites(&data.sites, &sites_path)?;
    Ok((csv_path, sites_path))
}

/// Sample variance (population denominator).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}
