//! Input records, CSV schemas and the two-phase analysis dataset.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodistance::{Coordinate, ProximityPair, Site};

/// One row of the neighborhoods CSV: `id,lat,lon,population,cases,metro,county`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub population: f64,
    pub cases: f64,
    pub metro: u8,
    pub county: String,
}

impl NeighborhoodRecord {
    pub fn site(&self) -> Result<Site> {
        Ok(Site::new(self.id.clone(), Coordinate::new(self.lat, self.lon)?))
    }
}

/// One row of the stores CSV: `id,lat,lon,category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
}

impl StoreRecord {
    pub fn site(&self) -> Result<Site> {
        Ok(Site::new(self.id.clone(), Coordinate::new(self.lat, self.lon)?))
    }
}

/// Proximity CSV row: `id,x_star,x,queried`; `x` is empty when not queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProximityRow {
    id: String,
    x_star: f64,
    x: Option<f64>,
    queried: u8,
}

fn read_rows<T: for<'de> Deserialize<'de>>(reader: impl Read) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn read_neighborhoods(reader: impl Read) -> Result<Vec<NeighborhoodRecord>> {
    let rows: Vec<NeighborhoodRecord> = read_rows(reader)?;
    for r in &rows {
        if r.metro > 1 {
            return Err(Error::invalid(format!("neighborhood `{}`: metro must be 0 or 1", r.id)));
        }
        Coordinate::new(r.lat, r.lon).map_err(|e| Error::invalid(format!("neighborhood `{}`: {e}", r.id)))?;
    }
    Ok(rows)
}

pub fn read_stores(reader: impl Read) -> Result<Vec<StoreRecord>> {
    let rows: Vec<StoreRecord> = read_rows(reader)?;
    for r in &rows {
        Coordinate::new(r.lat, r.lon).map_err(|e| Error::invalid(format!("store `{}`: {e}", r.id)))?;
    }
    Ok(rows)
}

pub fn read_proximity(reader: impl Read) -> Result<Vec<ProximityPair>> {
    let rows: Vec<ProximityRow> = read_rows(reader)?;
    rows.into_iter()
        .map(|r| {
            if (r.queried == 1) != r.x.is_some() {
                return Err(Error::invalid(format!("proximity row `{}`: queried flag disagrees with x", r.id)));
            }
            ProximityPair::new(r.id, r.x_star, r.x)
        })
        .collect()
}

pub fn write_proximity(pairs: &[ProximityPair], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    for p in pairs {
        w.serialize(ProximityRow { id: p.id().to_string(), x_star: p.x_star(), x: p.x(), queried: p.queried() as u8 })?;
    }
    w.flush()?;
    Ok(())
}

/// A named, fully observed covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<f64>,
}

/// Outcome, population, both proximity measures and covariates for N units;
/// map proximity `x` is present only for queried units.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseData {
    pub ids: Vec<String>,
    pub y: Vec<f64>,
    pub pop: Vec<f64>,
    pub x_star: Vec<f64>,
    pub x: Vec<Option<f64>>,
    pub covariates: Vec<Covariate>,
}

impl TwoPhaseData {
    pub fn new(
        ids: Vec<String>,
        y: Vec<f64>,
        pop: Vec<f64>,
        x_star: Vec<f64>,
        x: Vec<Option<f64>>,
        covariates: Vec<Covariate>,
    ) -> Result<Self> {
        let data = Self { ids, y, pop, x_star, x, covariates };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::invalid("dataset has no rows"));
        }
        if self.ids.len() != n || self.pop.len() != n || self.x_star.len() != n || self.x.len() != n {
            return Err(Error::invalid("dataset columns have different lengths"));
        }
        for c in &self.covariates {
            if c.values.len() != n {
                return Err(Error::invalid(format!(
                    "covariate `{}` has {} rows, expected {n}",
                    c.name,
                    c.values.len()
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("covariate `{}` has non-finite values", c.name)));
            }
        }
        for i in 0..n {
            let y = self.y[i];
            if !(y.is_finite() && y >= 0.0) || y.fract() != 0.0 {
                return Err(Error::invalid(format!("row {i}: outcome must be a nonnegative integer, got {y}")));
            }
            if !(self.pop[i].is_finite() && self.pop[i] > 0.0) {
                return Err(Error::invalid(format!("row {i}: population must be positive, got {}", self.pop[i])));
            }
            if !self.x_star[i].is_finite() {
                return Err(Error::invalid(format!("row {i}: x_star is not finite")));
            }
            if matches!(self.x[i], Some(v) if !v.is_finite()) {
                return Err(Error::invalid(format!("row {i}: x is not finite")));
            }
        }
        Ok(())
    }

    /// Joins proximity pairs to neighborhood records on id. Every id must
    /// appear exactly once on both sides.
    pub fn from_records(pairs: &[ProximityPair], neighborhoods: &[NeighborhoodRecord]) -> Result<Self> {
        let mut by_id: HashMap<&str, &NeighborhoodRecord> = HashMap::with_capacity(neighborhoods.len());
        for r in neighborhoods {
            if by_id.insert(r.id.as_str(), r).is_some() {
                return Err(Error::invalid(format!("duplicate neighborhood id `{}`", r.id)));
            }
        }
        let pair_ids: BTreeSet<&str> = pairs.iter().map(|p| p.id()).collect();
        if pair_ids.len() != pairs.len() {
            return Err(Error::invalid("duplicate ids in proximity table"));
        }
        let mut orphans: Vec<String> =
            pairs.iter().filter(|p| !by_id.contains_key(p.id())).map(|p| format!("proximity:{}", p.id())).collect();
        orphans.extend(
            neighborhoods
                .iter()
                .filter(|r| !pair_ids.contains(r.id.as_str()))
                .map(|r| format!("neighborhoods:{}", r.id)),
        );
        if !orphans.is_empty() {
            return Err(Error::invalid(format!("ids do not match 1:1; orphaned: {}", orphans.join(", "))));
        }
        let rows: Vec<&NeighborhoodRecord> = pairs.iter().map(|p| by_id[p.id()]).collect();
        Self::new(
            pairs.iter().map(|p| p.id().to_string()).collect(),
            rows.iter().map(|r| r.cases).collect(),
            rows.iter().map(|r| r.population).collect(),
            pairs.iter().map(|p| p.x_star()).collect(),
            pairs.iter().map(|p| p.x()).collect(),
            vec![Covariate { name: "metro".into(), values: rows.iter().map(|r| r.metro as f64).collect() }],
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_queried(&self) -> usize {
        self.x.iter().filter(|x| x.is_some()).count()
    }

    pub fn queried_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.x[i].is_some()).collect()
    }

    pub fn fully_queried(&self) -> bool {
        self.x.iter().all(Option::is_some)
    }

    pub fn log_pop(&self) -> Vec<f64> {
        self.pop.iter().map(|p| p.ln()).collect()
    }

    pub fn covariate(&self, name: &str) -> Result<&Covariate> {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::invalid(format!("dataset has no covariate `{name}`")))
    }

    /// Copy with every map proximity replaced by `x` (e.g. a completed imputation).
    pub fn with_exposure(&self, x: &[f64]) -> Result<Self> {
        if x.len() != self.n() {
            return Err(Error::invalid("exposure length does not match dataset"));
        }
        Ok(Self { x: x.iter().map(|&v| Some(v)).collect(), ..self.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NB: &str = "id,lat,lon,population,cases,metro,county\n\
        a,36.0,-80.0,4000,400,1,Forsyth\n\
        b,36.1,-80.1,3000,350,0,Stokes\n";

    #[test]
    fn proximity_csv_has_empty_x_for_unqueried() {
        let pairs =
            vec![ProximityPair::new("a", 1.25, Some(2.0)).unwrap(), ProximityPair::new("b", 0.5, None).unwrap()];
        let mut buf = Vec::new();
        write_proximity(&pairs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,x_star,x,queried\na,1.25,2.0,1\nb,0.5,,0\n");
        assert_eq!(read_proximity(text.as_bytes()).unwrap(), pairs);
    }

    #[test]
    fn inconsistent_queried_flag_is_rejected() {
        let text = "id,x_star,x,queried\na,1.0,,1\n";
        assert!(read_proximity(text.as_bytes()).is_err());
    }

    #[test]
    fn join_reports_orphans() {
        let nb = read_neighborhoods(NB.as_bytes()).unwrap();
        let pairs = vec![ProximityPair::new("a", 1.0, None).unwrap(), ProximityPair::new("c", 1.0, None).unwrap()];
        let err = TwoPhaseData::from_records(&pairs, &nb).unwrap_err().to_string();
        assert!(err.contains("proximity:c") && err.contains("neighborhoods:b"), "{err}");
    }

    #[test]
    fn join_builds_metro_covariate() {
        let nb = read_neighborhoods(NB.as_bytes()).unwrap();
        let pairs = vec![ProximityPair::new("b", 1.0, Some(1.5)).unwrap(), ProximityPair::new("a", 0.4, None).unwrap()];
        let d = TwoPhaseData::from_records(&pairs, &nb).unwrap();
        assert_eq!(d.ids, ["b", "a"]);
        assert_eq!(d.y, [350.0, 400.0]);
        assert_eq!(d.covariate("metro").unwrap().values, [0.0, 1.0]);
        assert_eq!(d.n_queried(), 1);
    }

    #[test]
    fn rejects_bad_metro() {
        let text = "id,lat,lon,population,cases,metro,county\na,36,-80,10,1,2,X\n";
        assert!(read_neighborhoods(text.as_bytes()).is_err());
    }

    #[test]
    fn rejects_non_integer_counts() {
        let r = TwoPhaseData::new(vec!["a".into()], vec![1.5], vec![10.0], vec![1.0], vec![None], vec![]);
        assert!(r.is_err());
    }
}
