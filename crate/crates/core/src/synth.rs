//! Simulated two-phase datasets.
//!
//! Map proximity X ~ Gamma(shape, scale); straight-line proximity is either
//! X* = X + U with U ~ TN(mu_U, sigma_U; -X, 0) or X* = W X with
//! W ~ TN(mu_W, sigma_W; 0, 1). Pop ~ Poisson(pop_mean) and
//! Y ~ Poisson(Pop exp(beta0 + beta1 X)). A simple random share q of rows is
//! marked as queried.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::TwoPhaseData;
use crate::error::{Error, Result};
use crate::stats::sample_truncated_normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorMechanism {
    /// X* = X + U, U truncated to [-X, 0].
    Additive { mu: f64, sigma: f64 },
    /// X* = W X, W truncated to [0, 1].
    Multiplicative { mu: f64, sigma: f64 },
}

impl ErrorMechanism {
    fn validate(&self) -> Result<()> {
        match *self {
            ErrorMechanism::Additive { mu, sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::config(format!("additive error sigma must be > 0, got {sigma}")));
                }
                if mu.is_nan() || mu > 0.0 {
                    return Err(Error::config(format!("additive error mean must be <= 0, got {mu}")));
                }
            }
            ErrorMechanism::Multiplicative { mu, sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::config(format!("multiplicative error sigma must be > 0, got {sigma}")));
                }
                if !(mu > 0.0 && mu < 1.0) {
                    return Err(Error::config(format!("multiplicative error mean must lie in (0, 1), got {mu}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_neighborhoods: usize,
    pub query_fraction: f64,
    pub mechanism: ErrorMechanism,
    pub beta0: f64,
    pub beta1: f64,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    pub pop_mean: f64,
    pub n_imputations: usize,
    pub n_replicates: usize,
    pub base_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_neighborhoods: 387,
            query_fraction: 0.1,
            mechanism: ErrorMechanism::Additive { mu: -0.7, sigma: 0.8 },
            beta0: -2.2,
            beta1: 0.01,
            gamma_shape: 1.0,
            gamma_scale: 2.5,
            pop_mean: 4095.0,
            n_imputations: 20,
            n_replicates: 1000,
            base_seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.mechanism.validate()?;
        if self.n_neighborhoods == 0 {
            return Err(Error::config("number of neighborhoods must be positive"));
        }
        if !(self.query_fraction > 0.0 && self.query_fraction <= 1.0) {
            return Err(Error::config(format!("query fraction must lie in (0, 1], got {}", self.query_fraction)));
        }
        if self.n_imputations < 2 {
            return Err(Error::config("at least two imputations are required for pooled variances"));
        }
        if self.n_replicates == 0 {
            return Err(Error::config("number of replicates must be positive"));
        }
        if !(self.gamma_shape > 0.0 && self.gamma_scale > 0.0 && self.pop_mean > 0.0) {
            return Err(Error::config("gamma shape, gamma scale and population mean must be positive"));
        }
        if !self.beta0.is_finite() || !self.beta1.is_finite() {
            return Err(Error::config("coefficients must be finite"));
        }
        queried_count(self.n_neighborhoods, self.query_fraction)?;
        Ok(())
    }

    /// Number of queried rows, nearest-integer(N q).
    pub fn n_queried(&self) -> Result<usize> {
        queried_count(self.n_neighborhoods, self.query_fraction)
    }
}

/// One simulated neighborhood. `err` is U (additive) or W (multiplicative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub x: f64,
    pub x_star: f64,
    pub err: f64,
    pub pop: f64,
    pub y: f64,
    pub queried: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub rows: Vec<SimRow>,
}

impl SimulatedDataset {
    /// Analysis view: map proximity is hidden for unqueried rows.
    pub fn to_two_phase(&self) -> Result<TwoPhaseData> {
        self.view(false)
    }

    /// Oracle view with map proximity on every row.
    pub fn to_fully_observed(&self) -> Result<TwoPhaseData> {
        self.view(true)
    }

    fn view(&self, all: bool) -> Result<TwoPhaseData> {
        TwoPhaseData::new(
            (0..self.rows.len()).map(|i| format!("{}", i + 1)).collect(),
            self.rows.iter().map(|r| r.y).collect(),
            self.rows.iter().map(|r| r.pop).collect(),
            self.rows.iter().map(|r| r.x_star).collect(),
            self.rows.iter().map(|r| (all || r.queried).then_some(r.x)).collect(),
            Vec::new(),
        )
    }

    /// Writes `x,x_star,err,pop,y,queried`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["x", "x_star", "err", "pop", "y", "queried"])?;
        for r in &self.rows {
            w.write_record([
                r.x.to_string(),
                r.x_star.to_string(),
                r.err.to_string(),
                r.pop.to_string(),
                r.y.to_string(),
                (r.queried as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn queried_count(n: usize, q: f64) -> Result<usize> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::config(format!("query fraction must lie in (0, 1], got {q}")));
    }
    let k = (n as f64 * q).round() as usize;
    if k == 0 {
        return Err(Error::config(format!("nearest-integer({n} x {q}) is zero; no rows would be queried")));
    }
    Ok(k.min(n))
}

/// Exactly nearest-integer(N q) `true` entries at uniformly random positions.
pub fn assign_queried<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Result<Vec<bool>> {
    let k = queried_count(n, q)?;
    let mut flags = vec![false; n];
    for i in sample(rng, n, k) {
        flags[i] = true;
    }
    Ok(flags)
}

/// `per_stratum` ids drawn without replacement from every stratum. Strata are
/// visited in sorted order and members in input order.
pub fn stratified_query_sample<'a, R, I>(records: I, per_stratum: usize, rng: &mut R) -> Result<BTreeSet<String>>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, stratum) in records {
        strata.entry(stratum).or_default().push(id);
    }
    let mut chosen = BTreeSet::new();
    for (stratum, members) in &strata {
        if members.len() < per_stratum {
            return Err(Error::config(format!(
                "stratum `{stratum}` has {} records, fewer than the {per_stratum} requested",
                members.len()
            )));
        }
        for i in sample(rng, members.len(), per_stratum) {
            chosen.insert(members[i].to_string());
        }
    }
    Ok(chosen)
}

fn base_draws<R: Rng + ?Sized>(
    config: &SimConfig,
    rng: &mut R,
    mut error: impl FnMut(f64, &mut R) -> Result<(f64, f64)>,
) -> Result<SimulatedDataset> {
    config.validate()?;
    let gamma = Gamma::new(config.gamma_shape, config.gamma_scale).map_err(|e| Error::config(e.to_string()))?;
    let pop_dist = Poisson::new(config.pop_mean).map_err(|e| Error::config(e.to_string()))?;
    let mut rows = Vec::with_capacity(config.n_neighborhoods);
    for _ in 0..config.n_neighborhoods {
        let x: f64 = gamma.sample(rng);
        let (err, x_star) = error(x, rng)?;
        let pop: f64 = pop_dist.sample(rng);
        let mean = pop * (config.beta0 + config.beta1 * x).exp();
        let y: f64 =
            if mean > 0.0 { Poisson::new(mean).map_err(|e| Error::config(e.to_string()))?.sample(rng) } else { 0.0 };
        rows.push(SimRow { x, x_star, err, pop, y, queried: false });
    }
    let flags = assign_queried(config.n_neighborhoods, config.query_fraction, rng)?;
    for (row, q) in rows.iter_mut().zip(flags) {
        row.queried = q;
    }
    Ok(SimulatedDataset { rows })
}

pub fn generate_additive<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SimulatedDataset> {
    let ErrorMechanism::Additive { mu, sigma } = config.mechanism else {
        return Err(Error::config("generate_additive needs an additive error mechanism"));
    };
    base_draws(config, rng, |x, rng| {
        if x <= 0.0 {
            return Ok((0.0, x));
        }
        let u = sample_truncated_normal(mu, sigma, -x, 0.0, rng)?;
        Ok((u, (x + u).clamp(0.0, x)))
    })
}

pub fn generate_multiplicative<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SimulatedDataset> {
    let ErrorMechanism::Multiplicative { mu, sigma } = config.mechanism else {
        return Err(Error::config("generate_multiplicative needs a multiplicative error mechanism"));
    };
    base_draws(config, rng, |x, rng| {
        let w = sample_truncated_normal(mu, sigma, 0.0, 1.0, rng)?;
        Ok((w, (w * x).clamp(0.0, x)))
    })
}

/// Dispatches on the configured mechanism.
pub fn generate<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SimulatedDataset> {
    match config.mechanism {
        ErrorMechanism::Additive { .. } => generate_additive(config, rng),
        ErrorMechanism::Multiplicative { .. } => generate_multiplicative(config, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats::{mean, sample_variance};

    fn cfg(n: usize, mechanism: ErrorMechanism) -> SimConfig {
        SimConfig { n_neighborhoods: n, mechanism, ..SimConfig::default() }
    }

    #[test]
    fn queried_counts_round_to_nearest() {
        let mut r = rng::seeded(1);
        assert_eq!(assign_queried(387, 0.1, &mut r).unwrap().iter().filter(|&&q| q).count(), 39);
        assert_eq!(assign_queried(2169, 0.25, &mut r).unwrap().iter().filter(|&&q| q).count(), 542);
        assert!(assign_queried(50, 1.0, &mut r).unwrap().iter().all(|&q| q));
        assert!(matches!(assign_queried(3, 0.1, &mut r), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn additive_rows_are_ordered() {
        let d =
            generate(&cfg(100_000, ErrorMechanism::Additive { mu: -0.7, sigma: 0.8 }), &mut rng::seeded(2)).unwrap();
        assert!(d.rows.iter().all(|r| 0.0 <= r.x_star && r.x_star <= r.x));
        assert_eq!(d.rows.iter().filter(|r| r.queried).count(), 10_000);
    }

    #[test]
    fn multiplicative_rows_are_ordered() {
        let d = generate(&cfg(100_000, ErrorMechanism::Multiplicative { mu: 0.7, sigma: 0.15 }), &mut rng::seeded(3))
            .unwrap();
        assert!(d.rows.iter().all(|r| 0.0 <= r.x_star && r.x_star <= r.x && (0.0..=1.0).contains(&r.err)));
    }

    #[test]
    fn default_prevalence_is_about_eleven_percent() {
        let d =
            generate(&cfg(100_000, ErrorMechanism::Additive { mu: -0.7, sigma: 0.8 }), &mut rng::seeded(4)).unwrap();
        let prev = mean(&d.rows.iter().map(|r| r.y / r.pop).collect::<Vec<_>>());
        assert!((prev - 0.11).abs() < 0.005, "prevalence {prev}");
    }

    #[test]
    fn same_seed_same_data() {
        let c = cfg(500, ErrorMechanism::Additive { mu: -0.7, sigma: 0.8 });
        let a = generate(&c, &mut rng::seeded(9)).unwrap();
        let b = generate(&c, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn marginal_means() {
        let d =
            generate(&cfg(1_000_000, ErrorMechanism::Additive { mu: -0.7, sigma: 0.8 }), &mut rng::seeded(5)).unwrap();
        let x: Vec<f64> = d.rows.iter().map(|r| r.x).collect();
        let pop: Vec<f64> = d.rows.iter().map(|r| r.pop).collect();
        let n = x.len() as f64;
        let se_x = (sample_variance(&x) / n).sqrt();
        let se_pop = (sample_variance(&pop) / n).sqrt();
        assert!((mean(&x) - 2.5).abs() < 4.0 * se_x);
        assert!((mean(&pop) - 4095.0).abs() < 4.0 * se_pop);
    }

    #[test]
    fn tiny_error_limit_recovers_x() {
        let d = generate(&cfg(2000, ErrorMechanism::Additive { mu: 0.0, sigma: 1e-9 }), &mut rng::seeded(6)).unwrap();
        assert!(d.rows.iter().all(|r| (r.x - r.x_star).abs() < 1e-7));
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig { mechanism: ErrorMechanism::Additive { mu: 0.5, sigma: 0.8 }, ..SimConfig::default() };
        assert!(c.validate().is_err());
        c.mechanism = ErrorMechanism::Multiplicative { mu: 1.2, sigma: 0.1 };
        assert!(c.validate().is_err());
        c = SimConfig { n_imputations: 1, ..SimConfig::default() };
        assert!(c.validate().is_err());
        c = SimConfig { query_fraction: 0.0, ..SimConfig::default() };
        assert!(c.validate().is_err());
        assert!(generate_multiplicative(&SimConfig::default(), &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn stratified_sample_takes_k_per_stratum() {
        let recs: Vec<(String, String)> = (0..60).map(|i| (format!("t{i}"), format!("county{}", i % 12))).collect();
        let mut r = rng::seeded(7);
        let chosen = stratified_query_sample(recs.iter().map(|(a, b)| (a.as_str(), b.as_str())), 4, &mut r).unwrap();
        assert_eq!(chosen.len(), 48);
        for c in 0..12 {
            let in_c = recs.iter().filter(|(id, s)| *s == format!("county{c}") && chosen.contains(id)).count();
            assert_eq!(in_c, 4);
        }
        let all = stratified_query_sample(recs.iter().map(|(a, b)| (a.as_str(), b.as_str())), 5, &mut r).unwrap();
        assert_eq!(all.len(), 60);
        let err = stratified_query_sample(recs.iter().map(|(a, b)| (a.as_str(), b.as_str())), 6, &mut r).unwrap_err();
        assert!(err.to_string().contains("county"));
    }

    #[test]
    fn dump_header() {
        let c = SimConfig { query_fraction: 1.0, ..cfg(3, ErrorMechanism::Additive { mu: -0.7, sigma: 0.8 }) };
        let d = generate(&c, &mut rng::seeded(8)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,x_star,err,pop,y,queried\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
