//! Spatial utilities: k-nearest-neighbor inverse-distance-weighted
//! interpolation, prediction-grid generation, and the neighbor weights shared
//! with second-stage training.
//!
//! Distances are great-circle (haversine) on lon/lat. A query closer than
//! [`EXACT_HIT_EPSILON_M`] to a sample is an exact hit and takes that sample's
//! value. Distance ties break toward the lower sample index, so results do
//! not depend on worker count or scheduling.

mod kdtree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::SiteRecord;
use kdtree::{KdTree, Point3};

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
/// Queries within one meter of a sample point count as exact hits.
pub const EXACT_HIT_EPSILON_M: f64 = 1.0;

/// Regular prediction grid: `n_x * n_y` cell centers of `cell_size` km,
/// laid out in a local equirectangular frame anchored at the origin corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_lon: f64,
    pub origin_lat: f64,
    /// Cell edge length in kilometers.
    pub cell_size: f64,
    pub n_x: usize,
    pub n_y: usize,
}

impl GridSpec {
    pub fn new(
        origin_lon: f64,
        origin_lat: f64,
        cell_size: f64,
        n_x: usize,
        n_y: usize,
    ) -> Result<Self> {
        let spec = GridSpec {
            origin_lon,
            origin_lat,
            cell_size,
            n_x,
            n_y,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::Config("grid.cell_size: must be > 0".into()));
        }
        if self.n_x < 1 {
            return Err(Error::Config("grid.n_x: must be >= 1".into()));
        }
        if self.n_y < 1 {
            return Err(Error::Config("grid.n_y: must be >= 1".into()));
        }
        if !self.origin_lon.is_finite() || !self.origin_lat.is_finite() {
            return Err(Error::Config(
                "grid origin: coordinates must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Per-query IDW weights over nearest samples; weights within a query sum to 1.
#[derive(Debug, Clone)]
pub struct NeighborWeights {
    /// One entry per query point: (sample index, weight).
    pub weights: Vec<Vec<(usize, f64)>>,
}

/// Great-circle distance in meters between two (lon, lat) points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

fn chord2_to_meters(d2: f64) -> f64 {
    // chord length c relates to central angle theta by c = 2 sin(theta/2)
    let half_chord = (d2.sqrt() / 2.0).min(1.0);
    2.0 * EARTH_RADIUS_M * half_chord.asin()
}

fn check_finite(points: &[(f64, f64)], what: &str) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if !p.0.is_finite() || !p.1.is_finite() {
            return Err(Error::Interpolate(format!(
                "{} point {} has non-finite coordinates",
                what, i
            )));
        }
    }
    Ok(())
}

/// Read-only spatial index shared across query workers.
pub struct SpatialIndex {
    tree: KdTree,
}

impl SpatialIndex {
    pub fn build(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Interpolate("no sample points".into()));
        }
        check_finite(points, "sample")?;
        let embedded: Vec<Point3> = points
            .iter()
            .map(|&(lon, lat)| Point3::from_lon_lat(lon, lat))
            .collect();
        Ok(SpatialIndex {
            tree: KdTree::build(embedded),
        })
    }

    /// The `k` nearest sample indices with great-circle distances in meters,
    /// ordered by (distance, index). `k` is clamped to the available count.
    pub fn k_nearest(&self, query: (f64, f64), k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let q = Point3::from_lon_lat(query.0, query.1);
        self.tree
            .k_nearest(&q, k.min(self.tree.len()), skip)
            .into_iter()
            .map(|(i, d2)| (i, chord2_to_meters(d2)))
            .collect()
    }
}

/// Turn (index, meters) neighbor lists into normalized IDW weights.
///
/// Exact hits (distance < epsilon) take all the weight; the lowest-index hit
/// wins so ties stay deterministic.
pub fn idw_weights(neighbors: &[(usize, f64)], power: f64) -> Vec<(usize, f64)> {
    if neighbors.is_empty() {
        return Vec::new();
    }
    if let Some(&(hit, _)) = neighbors.iter().find(|(_, d)| *d < EXACT_HIT_EPSILON_M) {
        return vec![(hit, 1.0)];
    }
    let raw: Vec<f64> = neighbors.iter().map(|(_, d)| d.powf(-power)).collect();
    let total: f64 = raw.iter().sum();
    neighbors
        .iter()
        .zip(raw)
        .map(|(&(i, _), w)| (i, w / total))
        .collect()
}

/// IDW interpolation of `sample_values` onto `query_points` using the `k`
/// nearest samples and weights proportional to distance^(-power).
pub fn idw_interpolate(
    sample_points: &[(f64, f64)],
    sample_values: &[f64],
    query_points: &[(f64, f64)],
    k: usize,
    power: f64,
) -> Result<Vec<f64>> {
    if sample_points.len() != sample_values.len() {
        return Err(Error::Interpolate(format!(
            "{} sample points but {} values",
            sample_points.len(),
            sample_values.len()
        )));
    }
    if k < 1 {
        return Err(Error::Interpolate("k must be >= 1".into()));
    }
    if !(power > 0.0) {
        return Err(Error::Interpolate("power must be > 0".into()));
    }
    check_finite(query_points, "query")?;
    for (i, v) in sample_values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Interpolate(format!(
                "sample value {} is not finite",
                i
            )));
        }
    }
    let index = SpatialIndex::build(sample_points)?;
    let values: Vec<f64> = query_points
        .par_iter()
        .map(|&q| {
            let neighbors = index.k_nearest(q, k, None);
            idw_weights(&neighbors, power)
                .iter()
                .map(|&(i, w)| w * sample_values[i])
                .sum()
        })
        .collect();
    Ok(values)
}

const M_PER_DEG_LAT: f64 = 110_574.0;
const M_PER_DEG_LON_EQUATOR: f64 = 111_320.0;

/// Cell-center site records for a prediction grid, ids `g_<ix>_<iy>`.
pub fn grid_points(spec: &GridSpec) -> Result<Vec<SiteRecord>> {
    spec.validate()?;
    let m_per_deg_lon = M_PER_DEG_LON_EQUATOR * spec.origin_lat.to_radians().cos();
    let cell_m = spec.cell_size * 1000.0;
    let mut records = Vec::with_capacity(spec.n_x * spec.n_y);
    for ix in 0..spec.n_x {
        for iy in 0..spec.n_y {
            let lon = spec.origin_lon + (ix as f64 + 0.5) * cell_m / m_per_deg_lon;
            let lat = spec.origin_lat + (iy as f64 + 0.5) * cell_m / M_PER_DEG_LAT;
            records.push(SiteRecord::new(format!("g_{}_{}", ix, iy), lon, lat)?);
        }
    }
    Ok(records)
}

/// Per-point IDW weights over each point's `k` nearest other points.
pub fn neighbor_weights(
    points: &[(f64, f64)],
    k: usize,
    power: f64,
    exclude_self: bool,
) -> Result<NeighborWeights> {
    if points.is_empty() {
        return Err(Error::Interpolate("no points".into()));
    }
    if exclude_self && points.len() < 2 {
        return Err(Error::Interpolate(
            "need at least 2 points when excluding self".into(),
        ));
    }
    check_finite(points, "input")?;
    let index = SpatialIndex::build(points)?;
    let weights: Vec<Vec<(usize, f64)>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let skip = if exclude_self { Some(i) } else { None };
            let neighbors = index.k_nearest(p, k, skip);
            idw_weights(&neighbors, power)
        })
        .collect();
    Ok(NeighborWeights { weights })
}
