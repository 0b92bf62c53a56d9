//! The four analysis strategies and prevalence-ratio reports.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::TwoPhaseData;
use crate::error::{Error, Result};
use crate::impute::{impute_analyze, ImputationOptions, ImputationResult, PooledEstimate, Reference};
use crate::regress::{fit_poisson, Design, DesignSpec, GlmFit};
use crate::rng;
use crate::spatial::MoranResult;
use crate::stats::{mean, median, normal_critical, sample_variance};

/// Name of the exposure column in every analysis design.
pub const EXPOSURE: &str = "x";

/// Poisson outcome model: log E[Y] = log Pop + b0 + b1 x + covariates + x:interactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct AnalysisSpec {
    pub covariates: Vec<String>,
    /// Covariates that also enter as a product with the exposure.
    pub interactions: Vec<String>,
}

impl AnalysisSpec {
    /// Every covariate in `data`, each interacted with the exposure.
    pub fn full(data: &TwoPhaseData) -> Self {
        let names: Vec<String> = data.covariates.iter().map(|c| c.name.clone()).collect();
        Self { covariates: names.clone(), interactions: names }
    }

    pub fn validate(&self) -> Result<()> {
        for name in &self.interactions {
            if !self.covariates.contains(name) {
                return Err(Error::config(format!("interaction with `{name}` requires `{name}` as a covariate")));
            }
        }
        Ok(())
    }

    /// Poisson design using `exposure` as x, restricted to `rows` when given.
    pub fn design(&self, data: &TwoPhaseData, exposure: &[f64], rows: Option<&[usize]>) -> Result<DesignSpec> {
        self.validate()?;
        if exposure.len() != data.n() {
            return Err(Error::invalid(format!("exposure has {} rows, dataset has {}", exposure.len(), data.n())));
        }
        let mut design = Design::new(data.n()).with(EXPOSURE, exposure.to_vec())?;
        for name in &self.covariates {
            design.push(name.clone(), data.covariate(name)?.values.clone())?;
        }
        for name in &self.interactions {
            let z = &data.covariate(name)?.values;
            design.push(format!("{EXPOSURE}:{name}"), exposure.iter().zip(z).map(|(a, b)| a * b).collect())?;
        }
        let offset = data.log_pop();
        match rows {
            None => DesignSpec::new(data.y.clone(), offset, design),
            Some(rows) => DesignSpec::new(
                rows.iter().map(|&i| data.y[i]).collect(),
                rows.iter().map(|&i| offset[i]).collect(),
                design.select_rows(rows),
            ),
        }
    }

    pub fn n_coefficients(&self) -> usize {
        2 + self.covariates.len() + self.interactions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Gold,
    Naive,
    CompleteCase,
    Imputation,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Gold, Strategy::Naive, Strategy::CompleteCase, Strategy::Imputation];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Gold => "gold",
            Strategy::Naive => "naive",
            Strategy::CompleteCase => "complete_case",
            Strategy::Imputation => "imputation",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fit with the error-free exposure on every row.
pub fn run_gold(data: &TwoPhaseData, spec: &AnalysisSpec) -> Result<GlmFit> {
    let missing = data.n() - data.n_queried();
    if missing > 0 {
        return Err(Error::Unavailable(format!("{missing} rows have no map-based proximity")));
    }
    let x: Vec<f64> = data.x.iter().map(|x| x.expect("queried")).collect();
    fit_poisson(&spec.design(data, &x, None)?)
}

/// Fit with the straight-line exposure on every row.
pub fn run_naive(data: &TwoPhaseData, spec: &AnalysisSpec) -> Result<GlmFit> {
    fit_poisson(&spec.design(data, &data.x_star, None)?)
}

/// Fit with the error-free exposure on the queried rows only.
pub fn run_complete_case(data: &TwoPhaseData, spec: &AnalysisSpec) -> Result<GlmFit> {
    let rows = data.queried_indices();
    let needed = spec.n_coefficients() + 1;
    if rows.len() < needed {
        return Err(Error::InsufficientValidation { needed, found: rows.len() });
    }
    let x: Vec<f64> = data.x.iter().map(|x| x.unwrap_or(0.0)).collect();
    fit_poisson(&spec.design(data, &x, Some(&rows))?)
}

pub fn run_imputation<R: Rng + ?Sized>(
    data: &TwoPhaseData,
    spec: &AnalysisSpec,
    opts: &ImputationOptions,
    rng: &mut R,
) -> Result<ImputationResult> {
    impute_analyze(data, spec, opts, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub pr: f64,
    pub pr_lo: f64,
    pub pr_hi: f64,
}

impl CoefRow {
    fn new(name: &str, estimate: f64, se: f64, (ci_lo, ci_hi): (f64, f64)) -> Self {
        Self {
            name: name.to_string(),
            estimate,
            se,
            ci_lo,
            ci_hi,
            pr: estimate.exp(),
            pr_lo: ci_lo.exp(),
            pr_hi: ci_hi.exp(),
        }
    }
}

fn glm_rows(fit: &GlmFit, level: f64) -> Vec<CoefRow> {
    let z = normal_critical(level);
    fit.names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (b, se) = (fit.coefficients[j], fit.variance(j).sqrt());
            CoefRow::new(name, b, se, (b - z * se, b + z * se))
        })
        .collect()
}

fn pooled_rows(p: &PooledEstimate, level: f64, reference: Reference) -> Vec<CoefRow> {
    p.names
        .iter()
        .enumerate()
        .map(|(j, name)| CoefRow::new(name, p.estimate[j], p.se(j), p.interval(j, level, reference)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StrategyOutcome {
    Computed { n_used: usize, converged: bool, coefficients: Vec<CoefRow> },
    Unavailable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub outcome: StrategyOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportOptions {
    pub imputation: ImputationOptions,
    pub level: f64,
    pub reference: Reference,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { imputation: ImputationOptions::default(), level: 0.95, reference: Reference::Normal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub model: &'static str,
    pub n: usize,
    pub n_queried: usize,
    pub seed: u64,
    pub spec: AnalysisSpec,
    pub options: ReportOptions,
    pub negative_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub metadata: ReportMetadata,
    pub strategies: Vec<StrategyReport>,
    pub errors: Option<ErrorSummary>,
    pub spatial: Option<MoranResult>,
}

/// Rows used, convergence, coefficients and negative imputed draws.
type Computed = (usize, bool, Vec<CoefRow>, Option<usize>);

/// Runs every strategy that the data allow. Fails only when the naive fit fails.
pub fn report(data: &TwoPhaseData, spec: &AnalysisSpec, opts: &ReportOptions, seed: u64) -> Result<AnalysisReport> {
    spec.validate()?;
    let results: Vec<(Strategy, Result<Computed>)> = Strategy::ALL
        .par_iter()
        .map(|&s| {
            let r = match s {
                Strategy::Gold => run_gold(data, spec).map(|f| (f.n_obs, f.converged, glm_rows(&f, opts.level), None)),
                Strategy::Naive => {
                    run_naive(data, spec).map(|f| (f.n_obs, f.converged, glm_rows(&f, opts.level), None))
                }
                Strategy::CompleteCase => {
                    run_complete_case(data, spec).map(|f| (f.n_obs, f.converged, glm_rows(&f, opts.level), None))
                }
                Strategy::Imputation => {
                    let mut stream = rng::seeded(seed);
                    run_imputation(data, spec, &opts.imputation, &mut stream).map(|r| {
                        (
                            data.n(),
                            r.nonconverged == 0,
                            pooled_rows(&r.pooled, opts.level, opts.reference),
                            Some(r.negative_draws),
                        )
                    })
                }
            };
            (s, r)
        })
        .collect();

    let mut negative_draws = None;
    let mut strategies = Vec::with_capacity(4);
    for (strategy, r) in results {
        let outcome = match r {
            Ok((n_used, converged, coefficients, neg)) => {
                negative_draws = negative_draws.or(neg);
                StrategyOutcome::Computed { n_used, converged, coefficients }
            }
            Err(e) if strategy == Strategy::Naive => return Err(e),
            Err(Error::Unavailable(reason)) => StrategyOutcome::Unavailable { reason },
            Err(e) => StrategyOutcome::Unavailable { reason: e.to_string() },
        };
        strategies.push(StrategyReport { strategy, outcome });
    }
    Ok(AnalysisReport {
        metadata: ReportMetadata {
            model: "independence model",
            n: data.n(),
            n_queried: data.n_queried(),
            seed,
            spec: spec.clone(),
            options: opts.clone(),
            negative_draws,
        },
        strategies,
        errors: error_summary(data),
        spatial: None,
    })
}

impl AnalysisReport {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategyOutcome> {
        self.strategies.iter().find(|r| r.strategy == s).map(|r| &r.outcome)
    }

    pub fn coefficients(&self, s: Strategy) -> Option<&[CoefRow]> {
        match self.strategy(s)? {
            StrategyOutcome::Computed { coefficients, .. } => Some(coefficients),
            StrategyOutcome::Unavailable { .. } => None,
        }
    }

    /// CSV `strategy,coef,estimate,se,ci_lo,ci_hi,pr,pr_lo,pr_hi`. An
    /// unavailable strategy gets one row with coef `unavailable` and empty values.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["strategy", "coef", "estimate", "se", "ci_lo", "ci_hi", "pr", "pr_lo", "pr_hi"])?;
        for r in &self.strategies {
            match &r.outcome {
                StrategyOutcome::Computed { coefficients, .. } => {
                    for c in coefficients {
                        let nums = [c.estimate, c.se, c.ci_lo, c.ci_hi, c.pr, c.pr_lo, c.pr_hi].map(|v| v.to_string());
                        let mut rec = vec![r.strategy.as_str().to_string(), c.name.clone()];
                        rec.extend(nums);
                        w.write_record(&rec)?;
                    }
                }
                StrategyOutcome::Unavailable { .. } => {
                    w.write_record([r.strategy.as_str(), "unavailable", "", "", "", "", "", "", ""])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let m = &self.metadata;
        let mut out = format!(
            "Poisson prevalence-ratio estimates ({}), N = {}, queried = {}, B = {}, seed = {}\n\n",
            m.model, m.n, m.n_queried, m.options.imputation.b, m.seed
        );
        let pct = m.options.level * 100.0;
        out.push_str(&format!(
            "{:<14} {:<14} {:>10} {:>9} {:>21} {:>7} {:>17}\n",
            "strategy",
            "coef",
            "estimate",
            "se",
            format!("{pct:.0}% CI"),
            "PR",
            format!("{pct:.0}% CI (PR)")
        ));
        for r in &self.strategies {
            match &r.outcome {
                StrategyOutcome::Computed { coefficients, converged, .. } => {
                    for c in coefficients {
                        out.push_str(&format!(
                            "{:<14} {:<14} {:>10.5} {:>9.5} {:>21} {:>7.3} {:>17}\n",
                            r.strategy.as_str(),
                            c.name,
                            c.estimate,
                            c.se,
                            format!("({:.5}, {:.5})", c.ci_lo, c.ci_hi),
                            c.pr,
                            format!("({:.3}, {:.3})", c.pr_lo, c.pr_hi)
                        ));
                    }
                    if !converged {
                        out.push_str(&format!("{:<14} warning: fit did not converge\n", r.strategy.as_str()));
                    }
                }
                StrategyOutcome::Unavailable { reason } => {
                    out.push_str(&format!("{:<14} unavailable ({reason})\n", r.strategy.as_str()));
                }
            }
        }
        if let Some(neg) = m.negative_draws.filter(|&n| n > 0) {
            out.push_str(&format!("\n{neg} imputed proximities were negative and kept as drawn.\n"));
        }
        if let Some(e) = &self.errors {
            out.push_str(&format!(
                "\nmeasurement error on {} queried rows: U mean {:.3}, sd {:.3}, median {:.3}, {:.1}% within 1 mile",
                e.n, e.mean_u, e.sd_u, e.median_u, e.pct_within_one_mile
            ));
            if let (Some(mw), Some(sw), Some(minw)) = (e.mean_w, e.sd_w, e.min_w) {
                out.push_str(&format!("; W mean {mw:.3}, sd {sw:.3}, min {minw:.3}"));
            }
            out.push('\n');
        }
        if let Some(s) = &self.spatial {
            out.push_str(&format!(
                "\nMoran's I on naive residuals: I = {:.4} (expected {:.4}), p = {:.4} [{}]\n",
                s.statistic, s.expected, s.p_value, s.inference
            ));
            if s.p_value < 0.05 {
                out.push_str("Residuals are spatially autocorrelated; standard errors from the independence model may be too small.\n");
            }
        }
        out
    }
}

/// Descriptive summary of U = X* - X and W = X*/X over the queried rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub n: usize,
    pub mean_u: f64,
    pub sd_u: f64,
    pub median_u: f64,
    pub pct_within_one_mile: f64,
    pub mean_w: Option<f64>,
    pub sd_w: Option<f64>,
    pub min_w: Option<f64>,
}

/// None when fewer than two rows are queried.
pub fn error_summary(data: &TwoPhaseData) -> Option<ErrorSummary> {
    let pairs: Vec<(f64, f64)> = data.x.iter().zip(&data.x_star).filter_map(|(x, &s)| x.map(|x| (x, s))).collect();
    if pairs.len() < 2 {
        return None;
    }
    let u: Vec<f64> = pairs.iter().map(|(x, s)| s - x).collect();
    let w: Vec<f64> = pairs.iter().filter(|(x, _)| *x > 0.0).map(|(x, s)| s / x).collect();
    let (mean_w, sd_w, min_w) = if w.len() >= 2 {
        (Some(mean(&w)), Some(sample_variance(&w).sqrt()), Some(w.iter().cloned().fold(f64::INFINITY, f64::min)))
    } else {
        (None, None, None)
    };
    Some(ErrorSummary {
        n: pairs.len(),
        mean_u: mean(&u),
        sd_u: sample_variance(&u).sqrt(),
        median_u: median(&u),
        pct_within_one_mile: 100.0 * u.iter().filter(|v| v.abs() <= 1.0).count() as f64 / u.len() as f64,
        mean_w,
        sd_w,
        min_w,
    })
}
