//! Multiple imputation of missing map proximity.
//!
//! A normal linear model for X given X*, log(Y) and covariates is fitted on
//! the queried rows. Each of B completed datasets replaces unqueried X with a
//! draw from that model, the analysis model is refitted, and the B fits are
//! pooled with Rubin's rules.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::analyze::AnalysisSpec;
use crate::data::TwoPhaseData;
use crate::error::{Error, Result};
use crate::regress::{fit_ols, fit_poisson, Design, GlmFit, OlsFit};
use crate::rng;
use crate::stats::{normal_critical, t_critical};

pub const DEFAULT_IMPUTATIONS: usize = 20;

/// Predictors of the imputation model besides the intercept, X* and log(Y).
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ImputationSpec {
    pub covariates: Vec<String>,
    /// Adds X* x Z for every covariate Z.
    pub interact: bool,
    /// Uses log(Y + c) instead of log(Y). None rejects zero counts.
    pub log_y_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationModel {
    pub spec: ImputationSpec,
    pub fit: OlsFit,
}

impl ImputationModel {
    pub fn sigma(&self) -> f64 {
        self.fit.residual_sd
    }

    pub fn names(&self) -> &[String] {
        &self.fit.names
    }

    pub fn alpha(&self) -> &[f64] {
        &self.fit.coefficients
    }

    /// Regression mean for every row of `data`.
    pub fn predict(&self, data: &TwoPhaseData) -> Result<Vec<f64>> {
        let design = imputation_design(data, &self.spec)?;
        Ok(predict_with(&design, &self.fit.coefficients))
    }
}

fn predict_with(design: &Design, alpha: &[f64]) -> Vec<f64> {
    (0..design.n_rows()).map(|i| design.linear_predictor(i, alpha)).collect()
}

fn imputation_design(data: &TwoPhaseData, spec: &ImputationSpec) -> Result<Design> {
    let shift = spec.log_y_shift.unwrap_or(0.0);
    if !(shift.is_finite() && shift >= 0.0) {
        return Err(Error::invalid(format!("log shift must be finite and >= 0, got {shift}")));
    }
    let mut log_y = Vec::with_capacity(data.n());
    for (row, &y) in data.y.iter().enumerate() {
        if y + shift <= 0.0 {
            return Err(Error::ZeroCount { row });
        }
        log_y.push((y + shift).ln());
    }
    let mut design = Design::new(data.n()).with("x_star", data.x_star.clone())?.with("log_y", log_y)?;
    for name in &spec.covariates {
        design.push(name.clone(), data.covariate(name)?.values.clone())?;
    }
    if spec.interact {
        for name in &spec.covariates {
            let z = &data.covariate(name)?.values;
            design.push(format!("x_star:{name}"), data.x_star.iter().zip(z).map(|(a, b)| a * b).collect())?;
        }
    }
    Ok(design)
}

/// OLS of X on the imputation predictors over the queried rows.
pub fn fit_imputation_model(data: &TwoPhaseData, spec: &ImputationSpec) -> Result<ImputationModel> {
    let design = imputation_design(data, spec)?;
    let rows = data.queried_indices();
    let needed = design.n_cols() + 1;
    if rows.len() < needed {
        return Err(Error::InsufficientValidation { needed, found: rows.len() });
    }
    let outcome: Vec<f64> = rows.iter().map(|&i| data.x[i].expect("queried row")).collect();
    let fit = fit_ols(&outcome, &design.select_rows(&rows))?;
    Ok(ImputationModel { spec: spec.clone(), fit })
}

fn fill<R: Rng + ?Sized>(data: &TwoPhaseData, means: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    data.x
        .iter()
        .zip(means)
        .map(|(x, &m)| match x {
            Some(v) => *v,
            None => {
                let z: f64 = StandardNormal.sample(rng);
                m + sigma * z
            }
        })
        .collect()
}

/// Completed exposure: observed X where queried, mean + sigma * N(0, 1) elsewhere.
/// No random numbers are consumed when every row is queried.
pub fn draw_completed_dataset<R: Rng + ?Sized>(
    model: &ImputationModel,
    data: &TwoPhaseData,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.fully_queried() {
        return Ok(data.x.iter().map(|x| x.expect("queried")).collect());
    }
    let means = model.predict(data)?;
    Ok(fill(data, &means, model.sigma(), rng))
}

/// Pooled multiple-imputation estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledEstimate {
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    /// Mean within-imputation variance, W.
    pub within: Vec<f64>,
    /// Between-imputation variance, B_var.
    pub between: Vec<f64>,
    /// W + (1 + 1/B) B_var.
    pub total: Vec<f64>,
    pub b: usize,
    /// Complete-data residual degrees of freedom (n - p).
    pub df_complete: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum Reference {
    #[default]
    Normal,
    /// Student t with Barnard-Rubin degrees of freedom.
    BarnardRubin,
}

impl PooledEstimate {
    pub fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    pub fn se(&self, j: usize) -> f64 {
        self.total[j].max(0.0).sqrt()
    }

    /// Barnard-Rubin small-sample degrees of freedom for coefficient `j`.
    pub fn df(&self, j: usize) -> f64 {
        let b = self.b as f64;
        if self.total[j] <= 0.0 {
            return f64::INFINITY;
        }
        let lambda = ((1.0 + 1.0 / b) * self.between[j] / self.total[j]).clamp(0.0, 1.0);
        let nu_com = self.df_complete;
        let nu_obs = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * (1.0 - lambda);
        if lambda == 0.0 {
            return nu_obs;
        }
        let nu_old = (b - 1.0) / (lambda * lambda);
        nu_old * nu_obs / (nu_old + nu_obs)
    }

    pub fn interval(&self, j: usize, level: f64, reference: Reference) -> (f64, f64) {
        let crit = match reference {
            Reference::Normal => normal_critical(level),
            Reference::BarnardRubin => t_critical(level, self.df(j)),
        };
        let half = crit * self.se(j);
        (self.estimate[j] - half, self.estimate[j] + half)
    }

    /// A single complete-data fit viewed as a pooled estimate with no
    /// between-imputation variance.
    pub fn from_single(fit: &GlmFit, b: usize) -> Self {
        let within: Vec<f64> = (0..fit.names.len()).map(|j| fit.variance(j)).collect();
        Self {
            names: fit.names.clone(),
            estimate: fit.coefficients.clone(),
            between: vec![0.0; within.len()],
            total: within.clone(),
            within,
            b,
            df_complete: (fit.n_obs - fit.names.len()) as f64,
        }
    }
}

/// Rubin's rules over B >= 2 fits with identical coefficient names.
pub fn pool_rubin(fits: &[GlmFit]) -> Result<PooledEstimate> {
    if fits.len() < 2 {
        return Err(Error::invalid(format!("pooling needs at least two fits, got {}", fits.len())));
    }
    let names = fits[0].names.clone();
    if let Some(f) = fits.iter().find(|f| f.names != names) {
        return Err(Error::invalid(format!("coefficient sets differ: {:?} vs {:?}", names, f.names)));
    }
    let b = fits.len() as f64;
    let p = names.len();
    let mut estimate = vec![0.0; p];
    let mut within = vec![0.0; p];
    let mut between = vec![0.0; p];
    let mut total = vec![0.0; p];
    for j in 0..p {
        let m = fits.iter().map(|f| f.coefficients[j]).sum::<f64>() / b;
        estimate[j] = m;
        within[j] = fits.iter().map(|f| f.variance(j)).sum::<f64>() / b;
        between[j] = fits.iter().map(|f| (f.coefficients[j] - m).powi(2)).sum::<f64>() / (b - 1.0);
        total[j] = within[j] + (1.0 + 1.0 / b) * between[j];
    }
    Ok(PooledEstimate {
        names,
        estimate,
        within,
        between,
        total,
        b: fits.len(),
        df_complete: (fits[0].n_obs - p) as f64,
    })
}

/// How the imputation-model parameters enter each draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum ParameterDraw {
    /// Point estimates held fixed across all B draws. Ignores the sampling
    /// uncertainty of the imputation model, so pooled SEs run small when few
    /// rows are queried.
    Fixed,
    /// Fresh (alpha, sigma) for every draw: sigma^2 = RSS / chi^2_(n-p) and
    /// alpha ~ N(alpha_hat, sigma^2 (X'X)^-1).
    #[default]
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationOptions {
    pub b: usize,
    pub spec: ImputationSpec,
    pub parameter_draw: ParameterDraw,
}

impl Default for ImputationOptions {
    fn default() -> Self {
        Self { b: DEFAULT_IMPUTATIONS, spec: ImputationSpec::default(), parameter_draw: ParameterDraw::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationResult {
    pub pooled: PooledEstimate,
    /// None when no row needed imputing.
    pub model: Option<ImputationModel>,
    pub negative_draws: usize,
    /// Imputation cycles whose analysis fit did not converge.
    pub nonconverged: usize,
}

fn posterior_parameters<R: Rng + ?Sized>(fit: &OlsFit, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let df = fit.df_resid() as f64;
    let chi: f64 = ChiSquared::new(df).map_err(|e| Error::invalid(e.to_string()))?.sample(rng);
    let sigma = fit.residual_sd * (df / chi).sqrt();
    let p = fit.coefficients.len();
    let v = DMatrix::from_fn(p, p, |i, j| fit.unscaled_covariance[i][j]);
    let l = v.cholesky().ok_or_else(|| Error::SingularDesign("imputation covariance".into()))?.l();
    let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    let alpha = (0..p).map(|i| fit.coefficients[i] + sigma * (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>()).collect();
    Ok((alpha, sigma))
}

/// Fits the imputation model once, then B draw/fit cycles, then pools.
///
/// Each cycle uses its own stream derived from one seed taken from `rng`, so
/// the result does not depend on thread scheduling.
pub fn impute_analyze<R: Rng + ?Sized>(
    data: &TwoPhaseData,
    analysis: &AnalysisSpec,
    opts: &ImputationOptions,
    rng: &mut R,
) -> Result<ImputationResult> {
    if opts.b < 2 {
        return Err(Error::config("at least two imputations are required"));
    }
    let seed: u64 = rng.random();
    if data.fully_queried() {
        let x: Vec<f64> = data.x.iter().map(|x| x.expect("queried")).collect();
        let fit = fit_poisson(&analysis.design(data, &x, None)?)?;
        return Ok(ImputationResult {
            pooled: PooledEstimate::from_single(&fit, opts.b),
            model: None,
            negative_draws: 0,
            nonconverged: usize::from(!fit.converged),
        });
    }
    let model = fit_imputation_model(data, &opts.spec)?;
    let design = imputation_design(data, &opts.spec)?;
    let means = predict_with(&design, model.alpha());

    let cycles: Vec<(GlmFit, usize)> = (0..opts.b)
        .into_par_iter()
        .map(|b| {
            let mut stream = rng::stream(seed, b as u64);
            let completed = match opts.parameter_draw {
                ParameterDraw::Fixed => fill(data, &means, model.sigma(), &mut stream),
                ParameterDraw::Posterior => {
                    let (alpha, sigma) = posterior_parameters(&model.fit, &mut stream)?;
                    fill(data, &predict_with(&design, &alpha), sigma, &mut stream)
                }
            };
            let negatives = completed.iter().zip(&data.x).filter(|(v, x)| x.is_none() && **v < 0.0).count();
            let fit = fit_poisson(&analysis.design(data, &completed, None)?)?;
            Ok((fit, negatives))
        })
        .collect::<Result<_>>()?;

    let negative_draws = cycles.iter().map(|c| c.1).sum();
    let nonconverged = cycles.iter().filter(|c| !c.0.converged).count();
    let fits: Vec<GlmFit> = cycles.into_iter().map(|c| c.0).collect();
    Ok(ImputationResult { pooled: pool_rubin(&fits)?, model: Some(model), negative_draws, nonconverged })
}

/// B completed exposure vectors, one per imputation. Given an identically
/// seeded `rng`, these are the datasets [`impute_analyze`] fits.
pub fn completed_datasets<R: Rng + ?Sized>(
    data: &TwoPhaseData,
    opts: &ImputationOptions,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let seed: u64 = rng.random();
    if data.fully_queried() {
        let x: Vec<f64> = data.x.iter().map(|x| x.expect("queried")).collect();
        return Ok(vec![x; opts.b]);
    }
    let model = fit_imputation_model(data, &opts.spec)?;
    let design = imputation_design(data, &opts.spec)?;
    let means = predict_with(&design, model.alpha());
    (0..opts.b)
        .map(|b| {
            let mut stream = rng::stream(seed, b as u64);
            Ok(match opts.parameter_draw {
                ParameterDraw::Fixed => fill(data, &means, model.sigma(), &mut stream),
                ParameterDraw::Posterior => {
                    let (alpha, sigma) = posterior_parameters(&model.fit, &mut stream)?;
                    fill(data, &predict_with(&design, &alpha), sigma, &mut stream)
                }
            })
        })
        .collect()
}
