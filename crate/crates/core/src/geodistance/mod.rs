//! Straight-line and map-based proximity to the nearest store.
//!
//! Straight-line distances use the haversine great-circle formula. Map-based
//! distances come from a [`DistanceProvider`]; only the per-neighborhood
//! minimum is kept.

mod provider;
mod remote;

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use provider::{DistanceProvider, FileProvider, PairRecord, RecordingProvider, SyntheticProvider};
pub use remote::{HttpTransport, RemoteConfig, RemoteProvider, RouteTransport, METERS_PER_MILE};

/// Mean Earth radius in miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.8;

/// Default share of nearest stores (by straight-line distance) that are routed.
pub const DEFAULT_CANDIDATE_PERCENTILE: f64 = 0.2;

/// Latitude/longitude in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    lat_deg: f64,
    lon_deg: f64,
}

impl Coordinate {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(Error::invalid(format!("latitude {lat_deg} outside [-90, 90]")));
        }
        if !lon_deg.is_finite() || !(-180.0..=180.0).contains(&lon_deg) {
            return Err(Error::invalid(format!("longitude {lon_deg} outside [-180, 180]")));
        }
        Ok(Self { lat_deg, lon_deg })
    }

    pub fn lat(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon(&self) -> f64 {
        self.lon_deg
    }
}

/// An identified location: a neighborhood population center or a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub coord: Coordinate,
}

impl Site {
    pub fn new(id: impl Into<String>, coord: Coordinate) -> Self {
        Self { id: id.into(), coord }
    }
}

/// Great-circle distance between two points on a sphere of the given radius.
pub fn haversine_distance(a: Coordinate, b: Coordinate, radius: f64) -> Result<f64> {
    check_radius(radius)?;
    Ok(haversine_unchecked(a, b, radius))
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("radius must be positive and finite, got {radius}")))
    }
}

#[inline]
fn haversine_unchecked(a: Coordinate, b: Coordinate, radius: f64) -> f64 {
    let (lat1, lat2) = (a.lat_deg.to_radians(), b.lat_deg.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon_deg - a.lon_deg).to_radians();
    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * radius * h.sqrt().min(1.0).asin()
}

/// All origin-by-store straight-line distances, row-major by origin.
pub fn distance_matrix(origins: &[Site], stores: &[Site], radius: f64) -> Result<Vec<f64>> {
    check_radius(radius)?;
    let mut out = Vec::with_capacity(origins.len() * stores.len());
    for o in origins {
        out.extend(stores.iter().map(|s| haversine_unchecked(o.coord, s.coord, radius)));
    }
    Ok(out)
}

/// Nearest store and its distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Nearest {
    pub miles: f64,
    pub store_index: usize,
    pub store_id: String,
}

/// Minimum straight-line distance from `center` to any store.
pub fn straight_line_proximity(center: Coordinate, stores: &[Site], radius: f64) -> Result<Nearest> {
    if stores.is_empty() {
        return Err(Error::invalid("store list is empty"));
    }
    check_radius(radius)?;
    let (store_index, miles) = stores
        .iter()
        .map(|s| haversine_unchecked(center, s.coord, radius))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
    Ok(Nearest { miles, store_index, store_id: stores[store_index].id.clone() })
}

/// Number of candidate stores routed for a store count `m` and percentile `p`:
/// floor(m * p), at least one.
pub fn candidate_count(m: usize, percentile: f64) -> Result<usize> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::invalid(format!("percentile must lie in (0, 1], got {percentile}")));
    }
    // the epsilon absorbs products such as 100 * 0.29 = 28.999999999999996
    let k = (m as f64 * percentile + 1e-9).floor() as usize;
    Ok(k.clamp(1, m.max(1)))
}

/// The nearest floor(M * percentile) stores by straight-line distance, nearest
/// first. Ties are broken by store id.
pub fn candidate_stores(center: Coordinate, stores: &[Site], percentile: f64, radius: f64) -> Result<Vec<&Site>> {
    if stores.is_empty() {
        return Err(Error::invalid("store list is empty"));
    }
    let k = candidate_count(stores.len(), percentile)?;
    check_radius(radius)?;
    let mut ranked: Vec<(f64, &Site)> =
        stores.iter().map(|s| (haversine_unchecked(center, s.coord, radius), s)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(ranked.into_iter().take(k).map(|(_, s)| s).collect())
}

/// Minimum map-based distance over `candidates`.
///
/// Individual pair distances are not retained.
pub fn map_proximity(center: &Site, candidates: &[&Site], provider: &dyn DistanceProvider) -> Result<Nearest> {
    if candidates.is_empty() {
        return Err(Error::invalid(format!("no candidate stores for `{}`", center.id)));
    }
    let mut best: Option<Nearest> = None;
    for (i, store) in candidates.iter().enumerate() {
        let miles = provider.distance(center, store).map_err(|e| match e {
            Error::MissingDistance { .. } => e,
            other => Error::PartialResult { neighborhood: center.id.clone(), source: Box::new(other) },
        })?;
        if best.as_ref().is_none_or(|b| miles < b.miles) {
            best = Some(Nearest { miles, store_index: i, store_id: store.id.clone() });
        }
    }
    Ok(best.expect("candidates is non-empty"))
}

/// Per-neighborhood straight-line proximity and, when queried, map proximity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityPair {
    neighborhood_id: String,
    x_star: f64,
    x: Option<f64>,
}

impl ProximityPair {
    pub fn new(neighborhood_id: impl Into<String>, x_star: f64, x: Option<f64>) -> Result<Self> {
        let neighborhood_id = neighborhood_id.into();
        if !(x_star.is_finite() && x_star >= 0.0) {
            return Err(Error::invalid(format!(
                "x_star for `{neighborhood_id}` must be finite and >= 0, got {x_star}"
            )));
        }
        if let Some(x) = x {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::invalid(format!("x for `{neighborhood_id}` must be finite and >= 0, got {x}")));
            }
        }
        Ok(Self { neighborhood_id, x_star, x })
    }

    pub fn id(&self) -> &str {
        &self.neighborhood_id
    }

    pub fn x_star(&self) -> f64 {
        self.x_star
    }

    pub fn x(&self) -> Option<f64> {
        self.x
    }

    pub fn queried(&self) -> bool {
        self.x.is_some()
    }

    /// Flags map proximity shorter than straight-line proximity by more than `tolerance`.
    pub fn consistency_warning(&self, tolerance: f64) -> Option<String> {
        match self.x {
            Some(x) if x < self.x_star - tolerance => Some(format!(
                "`{}`: map proximity {x:.4} mi is below straight-line proximity {:.4} mi",
                self.neighborhood_id, self.x_star
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProximityOptions {
    pub percentile: f64,
    pub radius: f64,
    /// Slack allowed when comparing map distances against straight-line ones.
    pub tolerance: f64,
}

impl Default for ProximityOptions {
    fn default() -> Self {
        Self { percentile: DEFAULT_CANDIDATE_PERCENTILE, radius: EARTH_RADIUS_MILES, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct ProximityTable {
    /// Sorted by neighborhood id.
    pub pairs: Vec<ProximityPair>,
    pub warnings: Vec<String>,
}

/// Straight-line proximity for every neighborhood plus map proximity for the
/// ids in `query_set`.
pub fn build_proximity_table(
    neighborhoods: &[Site],
    stores: &[Site],
    provider: &dyn DistanceProvider,
    query_set: &BTreeSet<String>,
    opts: &ProximityOptions,
) -> Result<ProximityTable> {
    let mut seen = HashSet::with_capacity(neighborhoods.len());
    for n in neighborhoods {
        if !seen.insert(n.id.as_str()) {
            return Err(Error::invalid(format!("duplicate neighborhood id `{}`", n.id)));
        }
    }
    if let Some(orphan) = query_set.iter().find(|id| !seen.contains(id.as_str())) {
        return Err(Error::invalid(format!("queried id `{orphan}` is not a neighborhood")));
    }
    candidate_count(stores.len(), opts.percentile)?;

    let mut order: Vec<&Site> = neighborhoods.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let straight: Vec<Nearest> =
        order.par_iter().map(|n| straight_line_proximity(n.coord, stores, opts.radius)).collect::<Result<_>>()?;

    let mut pairs = Vec::with_capacity(order.len());
    let mut warnings = Vec::new();
    for (n, near) in order.iter().zip(straight) {
        let x = if query_set.contains(&n.id) {
            let candidates = candidate_stores(n.coord, stores, opts.percentile, opts.radius)?;
            let mapped = map_proximity(n, &candidates, provider)?;
            let arc = haversine_unchecked(n.coord, candidates[mapped.store_index].coord, opts.radius);
            if mapped.miles < arc - opts.tolerance {
                warnings.push(format!(
                    "`{}`: provider distance {:.4} mi to `{}` is shorter than the great-circle distance {:.4} mi",
                    n.id, mapped.miles, mapped.store_id, arc
                ));
            }
            Some(mapped.miles)
        } else {
            None
        };
        let pair = ProximityPair::new(n.id.clone(), near.miles, x)?;
        if let Some(w) = pair.consistency_warning(opts.tolerance) {
            warnings.push(w);
        }
        pairs.push(pair);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ProximityTable { pairs, warnings })
}
