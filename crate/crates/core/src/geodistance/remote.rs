//! Generic HTTP routing client with a response cache, a request throttle and
//! a hard query budget.
//!
//! Request: `POST <endpoint>` with body
//! `{"origin":{"lat":..,"lon":..},"destination":{"lat":..,"lon":..}}`.
//! Response: `{"distance_meters": <number>}`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::provider::{DistanceProvider, PairRecord};
use super::{Coordinate, Site};
use crate::error::{Error, Result};

pub const METERS_PER_MILE: f64 = 1609.344;

/// Performs one routing request and returns the route length in meters.
pub trait RouteTransport: Send + Sync {
    fn route_meters(&self, origin: Coordinate, destination: Coordinate) -> Result<f64>;
}

#[derive(Serialize)]
struct LatLon {
    lat: f64,
    lon: f64,
}

#[derive(Serialize)]
struct RouteRequest {
    origin: LatLon,
    destination: LatLon,
}

#[derive(Deserialize)]
struct RouteResponse {
    distance_meters: f64,
}

pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { endpoint: endpoint.into(), agent }
    }
}

impl RouteTransport for HttpTransport {
    fn route_meters(&self, origin: Coordinate, destination: Coordinate) -> Result<f64> {
        let body = RouteRequest {
            origin: LatLon { lat: origin.lat(), lon: origin.lon() },
            destination: LatLon { lat: destination.lat(), lon: destination.lon() },
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Provider(format!("{}: {e}", self.endpoint)))?;
        let parsed: RouteResponse =
            resp.body_mut().read_json().map_err(|e| Error::Provider(format!("malformed routing response: {e}")))?;
        if !(parsed.distance_meters.is_finite() && parsed.distance_meters >= 0.0) {
            return Err(Error::Provider(format!("routing response has invalid distance {}", parsed.distance_meters)));
        }
        Ok(parsed.distance_meters)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Maximum number of outbound requests. Cache hits are free.
    pub budget: usize,
    /// Minimum spacing between consecutive outbound requests.
    pub min_interval: Duration,
    /// Append-only `origin_id,store_id,miles` cache; none keeps it in memory.
    pub cache_path: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self { budget: 2500, min_interval: Duration::from_millis(100), cache_path: None }
    }
}

struct State {
    cache: HashMap<(String, String), f64>,
    used: usize,
    last_request: Option<Instant>,
    cache_file: Option<csv::Writer<File>>,
}

pub struct RemoteProvider {
    transport: Box<dyn RouteTransport>,
    config: RemoteConfig,
    state: Mutex<State>,
}

impl RemoteProvider {
    pub fn new(transport: Box<dyn RouteTransport>, config: RemoteConfig) -> Result<Self> {
        let mut cache = HashMap::new();
        let mut cache_file = None;
        if let Some(path) = &config.cache_path {
            let existed = path.exists() && std::fs::metadata(path)?.len() > 0;
            if existed {
                let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
                for rec in rdr.deserialize::<PairRecord>() {
                    let rec = rec?;
                    cache.insert((rec.origin_id, rec.store_id), rec.miles);
                }
            }
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            if !existed {
                w.write_record(["origin_id", "store_id", "miles"])?;
                w.flush()?;
            }
            cache_file = Some(w);
        }
        Ok(Self { transport, config, state: Mutex::new(State { cache, used: 0, last_request: None, cache_file }) })
    }

    pub fn http(endpoint: impl Into<String>, timeout: Duration, config: RemoteConfig) -> Result<Self> {
        Self::new(Box::new(HttpTransport::new(endpoint, timeout)), config)
    }

    /// Outbound requests issued so far.
    pub fn requests_used(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).used
    }

    pub fn budget(&self) -> usize {
        self.config.budget
    }
}

impl DistanceProvider for RemoteProvider {
    fn distance(&self, origin: &Site, store: &Site) -> Result<f64> {
        // held across the request so identical concurrent queries go out once
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let key = (origin.id.clone(), store.id.clone());
        if let Some(&miles) = state.cache.get(&key) {
            return Ok(miles);
        }
        if state.used >= self.config.budget {
            return Err(Error::BudgetExhausted { budget: self.config.budget });
        }
        if let Some(last) = state.last_request {
            let wait = self.config.min_interval.saturating_sub(last.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        state.used += 1;
        state.last_request = Some(Instant::now());
        let miles = self.transport.route_meters(origin.coord, store.coord)? / METERS_PER_MILE;
        if let Some(w) = state.cache_file.as_mut() {
            w.serialize(PairRecord { origin_id: key.0.clone(), store_id: key.1.clone(), miles })?;
            w.flush()?;
        }
        state.cache.insert(key, miles);
        Ok(miles)
    }

    fn allows_pair_dump(&self) -> bool {
        false
    }
}
