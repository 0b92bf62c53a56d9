//! Monte Carlo scenarios: replicate loops, evaluation metrics and grids.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyze::{run_complete_case, run_gold, run_imputation, run_naive, AnalysisSpec, Strategy, EXPOSURE};
use crate::error::{Error, Result};
use crate::impute::{ImputationOptions, ParameterDraw, Reference};
use crate::regress::GlmFit;
use crate::rng;
use crate::stats::{mean, normal_critical, sample_variance};
use crate::synth::{generate, ErrorMechanism, SimConfig};

/// Largest failed share of replicates for a usable scenario.
pub const MAX_FAILED_SHARE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub sim: SimConfig,
    pub parameter_draw: ParameterDraw,
    pub reference: Reference,
}

impl ScenarioConfig {
    pub fn new(sim: SimConfig) -> Self {
        Self {
            name: default_name(&sim),
            sim,
            parameter_draw: ParameterDraw::default(),
            reference: Reference::default(),
        }
    }
}

fn default_name(c: &SimConfig) -> String {
    let (kind, mu, sigma) = match c.mechanism {
        ErrorMechanism::Additive { mu, sigma } => ("add", mu, sigma),
        ErrorMechanism::Multiplicative { mu, sigma } => ("mult", mu, sigma),
    };
    format!("n{}_q{}_{kind}_mu{mu}_sd{sigma}_b0{}_b1{}", c.n_neighborhoods, c.query_fraction, c.beta0, c.beta1)
}

/// Point estimate, standard error and coverage of the exposure coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    pub covers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    /// Ordered as [`Strategy::ALL`]; empty when the replicate failed.
    pub estimates: Vec<Estimate>,
    pub failure: Option<String>,
}

const LEVEL: f64 = 0.95;

fn from_glm(fit: &GlmFit, truth: f64) -> Result<Estimate> {
    if !fit.converged {
        return Err(Error::invalid("fit did not converge"));
    }
    let j = fit.index(EXPOSURE)?;
    let (b, se) = (fit.coefficients[j], fit.variance(j).sqrt());
    let half = normal_critical(LEVEL) * se;
    Ok(Estimate { estimate: b, se, covers: b - half <= truth && truth <= b + half })
}

fn replicate(scenario: &ScenarioConfig, index: usize) -> Result<Vec<Estimate>> {
    let config = &scenario.sim;
    let mut stream = rng::stream(config.base_seed, index as u64);
    let sim = generate(config, &mut stream)?;
    let data = sim.to_two_phase()?;
    let spec = AnalysisSpec::default();
    let truth = config.beta1;
    let gold = from_glm(&run_gold(&sim.to_fully_observed()?, &spec)?, truth)?;
    let naive = from_glm(&run_naive(&data, &spec)?, truth)?;
    let cc = from_glm(&run_complete_case(&data, &spec)?, truth)?;
    let opts =
        ImputationOptions { b: config.n_imputations, parameter_draw: scenario.parameter_draw, ..Default::default() };
    let imp = run_imputation(&data, &spec, &opts, &mut stream)?;
    if imp.nonconverged > 0 {
        return Err(Error::invalid(format!("{} imputation fits did not converge", imp.nonconverged)));
    }
    let j = imp.pooled.index(EXPOSURE)?;
    let (lo, hi) = imp.pooled.interval(j, LEVEL, scenario.reference);
    let mi = Estimate { estimate: imp.pooled.estimate[j], se: imp.pooled.se(j), covers: lo <= truth && truth <= hi };
    Ok(vec![gold, naive, cc, mi])
}

/// All replicates of one scenario. Replicate r uses stream r of the base seed,
/// so the outcome does not depend on thread count.
pub fn run_replicates(scenario: &ScenarioConfig) -> Result<Vec<ReplicateOutcome>> {
    scenario.sim.validate()?;
    Ok((0..scenario.sim.n_replicates)
        .into_par_iter()
        .map(|index| match replicate(scenario, index) {
            Ok(estimates) => ReplicateOutcome { index, estimates, failure: None },
            Err(e) => ReplicateOutcome { index, estimates: vec![], failure: Some(e.to_string()) },
        })
        .collect())
}

/// Per-replicate CSV `replicate,strategy,estimate,se,covers`.
pub fn write_replicates_csv(outcomes: &[ReplicateOutcome], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["replicate", "strategy", "estimate", "se", "covers"])?;
    for o in outcomes {
        for (s, e) in Strategy::ALL.iter().zip(&o.estimates) {
            w.write_record([
                o.index.to_string(),
                s.as_str().to_string(),
                e.estimate.to_string(),
                e.se.to_string(),
                u8::from(e.covers).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes each replicate's simulated dataset to `dir/replicate_<r>.csv`.
pub fn dump_datasets(config: &SimConfig, dir: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(dir)?;
    for r in 0..config.n_replicates {
        let d = generate(config, &mut rng::stream(config.base_seed, r as u64))?;
        d.write_csv(std::fs::File::create(dir.join(format!("replicate_{r}.csv")))?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySamples {
    pub strategy: Strategy,
    pub estimates: Vec<f64>,
    pub ses: Vec<f64>,
    pub covers: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyMetrics {
    pub strategy: Strategy,
    /// Relative to the truth when it is nonzero, absolute otherwise.
    pub bias: f64,
    pub ese: f64,
    pub ase: f64,
    pub cp: f64,
    /// Gold-standard variance over this strategy's variance; None when undefined.
    pub re: Option<f64>,
}

pub fn compute_metrics(samples: &[StrategySamples], truth: f64) -> Result<Vec<StrategyMetrics>> {
    for s in samples {
        let n = s.estimates.len();
        if n < 2 || s.ses.len() != n || s.covers.len() != n {
            return Err(Error::invalid(format!("strategy {} needs at least two aligned replicates", s.strategy)));
        }
    }
    let gold_var = samples.iter().find(|s| s.strategy == Strategy::Gold).map(|s| sample_variance(&s.estimates));
    Ok(samples
        .iter()
        .map(|s| {
            let err = mean(&s.estimates) - truth;
            let var = sample_variance(&s.estimates);
            StrategyMetrics {
                strategy: s.strategy,
                bias: if truth != 0.0 { err / truth } else { err },
                ese: var.sqrt(),
                ase: mean(&s.ses),
                cp: s.covers.iter().filter(|&&c| c).count() as f64 / s.covers.len() as f64,
                re: gold_var.filter(|_| var > 0.0).map(|g| g / var).filter(|r| r.is_finite() && *r > 0.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub config: SimConfig,
    pub metrics: Vec<StrategyMetrics>,
    pub n_reps: usize,
    pub n_failed: usize,
}

impl MetricsRow {
    pub fn get(&self, s: Strategy) -> &StrategyMetrics {
        self.metrics.iter().find(|m| m.strategy == s).expect("all strategies present")
    }
}

/// Aggregates replicate outcomes. Metrics use replicates where every strategy succeeded.
pub fn aggregate(scenario: &ScenarioConfig, outcomes: &[ReplicateOutcome]) -> Result<MetricsRow> {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.failure.is_none()).collect();
    let n_failed = outcomes.len() - ok.len();
    if n_failed as f64 > MAX_FAILED_SHARE * outcomes.len() as f64 || ok.len() < 2 {
        return Err(Error::ScenarioDegenerate {
            scenario: scenario.name.clone(),
            failed: n_failed,
            replicates: outcomes.len(),
        });
    }
    let samples: Vec<StrategySamples> = Strategy::ALL
        .iter()
        .enumerate()
        .map(|(k, &strategy)| StrategySamples {
            strategy,
            estimates: ok.iter().map(|o| o.estimates[k].estimate).collect(),
            ses: ok.iter().map(|o| o.estimates[k].se).collect(),
            covers: ok.iter().map(|o| o.estimates[k].covers).collect(),
        })
        .collect();
    Ok(MetricsRow {
        scenario: scenario.name.clone(),
        config: scenario.sim.clone(),
        metrics: compute_metrics(&samples, scenario.sim.beta1)?,
        n_reps: outcomes.len(),
        n_failed,
    })
}

pub fn run_scenario(scenario: &ScenarioConfig) -> Result<MetricsRow> {
    let outcomes = run_replicates(scenario)?;
    for o in outcomes.iter().filter(|o| o.failure.is_some()) {
        log::warn!("{} replicate {} failed: {}", scenario.name, o.index, o.failure.as_deref().unwrap_or(""));
    }
    aggregate(scenario, &outcomes)
}

/// Runs scenarios in order; a failing scenario does not stop the rest.
pub fn run_grid(grid: &[ScenarioConfig]) -> Result<Vec<Result<MetricsRow>>> {
    if grid.is_empty() {
        return Err(Error::config("grid has no scenarios"));
    }
    Ok(grid.iter().map(run_scenario).collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Metrics CSV `scenario,strategy,bias,ese,ase,cp,re,n_reps,n_failed`.
/// An undefined relative efficiency is written as `NA`.
pub fn write_metrics_csv(rows: &[MetricsRow], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["scenario", "strategy", "bias", "ese", "ase", "cp", "re", "n_reps", "n_failed"])?;
    for row in rows {
        for m in &row.metrics {
            w.write_record([
                row.scenario.clone(),
                m.strategy.as_str().to_string(),
                m.bias.to_string(),
                m.ese.to_string(),
                m.ase.to_string(),
                m.cp.to_string(),
                fmt_opt(m.re),
                row.n_reps.to_string(),
                row.n_failed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One `[defaults]` or `[[scenario]]` block of a grid file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    name: Option<String>,
    n: Option<usize>,
    q: Option<f64>,
    mechanism: Option<String>,
    mu: Option<f64>,
    sigma: Option<f64>,
    beta0: Option<f64>,
    beta1: Option<f64>,
    b: Option<usize>,
    replicates: Option<usize>,
    seed: Option<u64>,
    pop_mean: Option<f64>,
    gamma_shape: Option<f64>,
    gamma_scale: Option<f64>,
    proper: Option<bool>,
    reference: Option<String>,
}

impl Block {
    fn over(&self, base: &Block) -> Block {
        macro_rules! pick {
            ($($f:ident),*) => { Block { $($f: self.$f.clone().or_else(|| base.$f.clone()),)* } };
        }
        pick!(
            name,
            n,
            q,
            mechanism,
            mu,
            sigma,
            beta0,
            beta1,
            b,
            replicates,
            seed,
            pop_mean,
            gamma_shape,
            gamma_scale,
            proper,
            reference
        )
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    defaults: Block,
    #[serde(default)]
    scenario: Vec<Block>,
}

/// Parses a TOML grid. Keys: n, q, mechanism (`additive` or `multiplicative`),
/// mu, sigma, beta0, beta1, b, replicates, seed, plus optional name, pop_mean,
/// gamma_shape, gamma_scale, proper (redraw imputation parameters per draw)
/// and reference (`normal` or `barnard_rubin`). Scenario blocks override `[defaults]`, which
/// override built-in values.
///
/// A scenario's seed is its own `seed` key when present, otherwise a stream
/// derived from the defaults seed and the scenario's position.
pub fn parse_grid(text: &str) -> Result<Vec<ScenarioConfig>> {
    let file: GridFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    if file.scenario.is_empty() {
        return Err(Error::config("grid has no [[scenario]] blocks"));
    }
    let global_seed = file.defaults.seed.unwrap_or(SimConfig::default().base_seed);
    file.scenario
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let seed = block.seed.unwrap_or_else(|| rng::derive_seed(global_seed, i as u64));
            let b = block.over(&file.defaults);
            let d = SimConfig::default();
            let (dmu, dsigma) = match d.mechanism {
                ErrorMechanism::Additive { mu, sigma } | ErrorMechanism::Multiplicative { mu, sigma } => (mu, sigma),
            };
            let mechanism = match b.mechanism.as_deref().unwrap_or("additive") {
                "additive" => ErrorMechanism::Additive { mu: b.mu.unwrap_or(dmu), sigma: b.sigma.unwrap_or(dsigma) },
                "multiplicative" => {
                    let (Some(mu), Some(sigma)) = (b.mu, b.sigma) else {
                        return Err(Error::config(format!(
                            "scenario {}: multiplicative error needs mu and sigma",
                            i + 1
                        )));
                    };
                    ErrorMechanism::Multiplicative { mu, sigma }
                }
                other => return Err(Error::config(format!("scenario {}: unknown mechanism `{other}`", i + 1))),
            };
            let sim = SimConfig {
                n_neighborhoods: b.n.unwrap_or(d.n_neighborhoods),
                query_fraction: b.q.unwrap_or(d.query_fraction),
                mechanism,
                beta0: b.beta0.unwrap_or(d.beta0),
                beta1: b.beta1.unwrap_or(d.beta1),
                gamma_shape: b.gamma_shape.unwrap_or(d.gamma_shape),
                gamma_scale: b.gamma_scale.unwrap_or(d.gamma_scale),
                pop_mean: b.pop_mean.unwrap_or(d.pop_mean),
                n_imputations: b.b.unwrap_or(d.n_imputations),
                n_replicates: b.replicates.unwrap_or(d.n_replicates),
                base_seed: seed,
            };
            sim.validate().map_err(|e| Error::config(format!("scenario {}: {e}", i + 1)))?;
            let name = block.name.clone().unwrap_or_else(|| default_name(&sim));
            let parameter_draw = match b.proper {
                Some(true) => ParameterDraw::Posterior,
                Some(false) => ParameterDraw::Fixed,
                None => ParameterDraw::default(),
            };
            let reference = match b.reference.as_deref() {
                None => Reference::default(),
                Some("normal") => Reference::Normal,
                Some("barnard_rubin") => Reference::BarnardRubin,
                Some(other) => return Err(Error::config(format!("scenario {}: unknown reference `{other}`", i + 1))),
            };
            Ok(ScenarioConfig { name, sim, parameter_draw, reference })
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|grid| {
            let mut seen = BTreeMap::new();
            for s in &grid {
                if seen.insert(s.name.clone(), ()).is_some() {
                    return Err(Error::config(format!("duplicate scenario name `{}`", s.name)));
                }
            }
            Ok(grid)
        })
}
