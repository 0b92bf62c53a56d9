use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{haversine_distance, Site, EARTH_RADIUS_MILES};
use crate::error::{Error, Result};

/// Source of map-based (driving) distances in miles.
pub trait DistanceProvider: Send + Sync {
    fn distance(&self, origin: &Site, store: &Site) -> Result<f64>;

    /// Whether individual pair distances may be written out for debugging.
    fn allows_pair_dump(&self) -> bool {
        true
    }
}

/// One row of a pair-distance file: `origin_id,store_id,miles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub origin_id: String,
    pub store_id: String,
    pub miles: f64,
}

/// Precomputed distances keyed by (origin id, store id).
#[derive(Debug, Clone, Default)]
pub struct FileProvider {
    pairs: HashMap<(String, String), f64>,
}

impl FileProvider {
    pub fn from_records(records: impl IntoIterator<Item = PairRecord>) -> Result<Self> {
        let mut pairs = HashMap::new();
        for r in records {
            if !(r.miles.is_finite() && r.miles >= 0.0) {
                return Err(Error::invalid(format!(
                    "distance for ({}, {}) must be finite and >= 0, got {}",
                    r.origin_id, r.store_id, r.miles
                )));
            }
            pairs.insert((r.origin_id, r.store_id), r.miles);
        }
        Ok(Self { pairs })
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<PairRecord>, _>>()?;
        Self::from_records(records)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl DistanceProvider for FileProvider {
    fn distance(&self, origin: &Site, store: &Site) -> Result<f64> {
        self.pairs
            .get(&(origin.id.clone(), store.id.clone()))
            .copied()
            .ok_or_else(|| Error::MissingDistance { origin: origin.id.clone(), store: store.id.clone() })
    }
}

/// Straight-line distance divided by a fixed factor, so a factor in (0, 1]
/// inflates arc length the way road networks do.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticProvider {
    factor: f64,
    radius: f64,
}

impl SyntheticProvider {
    pub fn new(factor: f64) -> Result<Self> {
        Self::with_radius(factor, EARTH_RADIUS_MILES)
    }

    pub fn with_radius(factor: f64, radius: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(format!("synthetic factor must be positive, got {factor}")));
        }
        Ok(Self { factor, radius })
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

impl DistanceProvider for SyntheticProvider {
    fn distance(&self, origin: &Site, store: &Site) -> Result<f64> {
        Ok(haversine_distance(origin.coord, store.coord, self.radius)? / self.factor)
    }
}

/// Wraps a local provider and keeps every pair it answers, for debugging.
pub struct RecordingProvider<'a> {
    inner: &'a dyn DistanceProvider,
    log: Mutex<Vec<PairRecord>>,
}

impl<'a> RecordingProvider<'a> {
    pub fn new(inner: &'a dyn DistanceProvider) -> Result<Self> {
        if !inner.allows_pair_dump() {
            return Err(Error::invalid("pair distances from this provider may not be retained"));
        }
        Ok(Self { inner, log: Mutex::new(Vec::new()) })
    }

    pub fn into_records(self) -> Vec<PairRecord> {
        self.log.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl DistanceProvider for RecordingProvider<'_> {
    fn distance(&self, origin: &Site, store: &Site) -> Result<f64> {
        let miles = self.inner.distance(origin, store)?;
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(PairRecord {
            origin_id: origin.id.clone(),
            store_id: store.id.clone(),
            miles,
        });
        Ok(miles)
    }
}
