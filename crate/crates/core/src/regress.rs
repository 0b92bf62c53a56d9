//! Poisson regression with a log-population offset (IRLS) and ordinary least
//! squares.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::normal_critical;

pub const INTERCEPT: &str = "intercept";

/// Named design matrix. Column 0 is always the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(n_rows: usize) -> Self {
        Self { names: vec![INTERCEPT.to_string()], columns: vec![vec![1.0; n_rows]] }
    }

    pub fn with(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.push(name, values)?;
        Ok(self)
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_rows() {
            return Err(Error::invalid(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("column `{name}` has non-finite values")));
        }
        if self.names.contains(&name) {
            return Err(Error::invalid(format!("duplicate column `{name}`")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.columns[j].as_slice())
    }

    /// Keeps only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), self.n_cols(), |i, j| self.columns[j][i])
    }

    /// Row `i` times `beta`.
    pub fn linear_predictor(&self, i: usize, beta: &[f64]) -> f64 {
        self.columns.iter().zip(beta).map(|(c, b)| c[i] * b).sum()
    }

    fn check_rank(&self) -> Result<()> {
        let (n, p) = (self.n_rows(), self.n_cols());
        if n <= p {
            return Err(Error::SingularDesign(format!("{n} rows for {p} columns")));
        }
        let r = self.matrix().qr().r();
        let diag: Vec<f64> = (0..p).map(|j| r[(j, j)].abs()).collect();
        let largest = diag.iter().cloned().fold(0.0, f64::max);
        if let Some(j) = diag.iter().position(|&d| d <= 1e-10 * largest.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularDesign(format!(
                "column `{}` is linearly dependent on earlier columns",
                self.names[j]
            )));
        }
        Ok(())
    }
}

/// Outcome counts, log offset and predictors for a Poisson model.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub outcome: Vec<f64>,
    pub offset: Vec<f64>,
    pub design: Design,
}

impl DesignSpec {
    pub fn new(outcome: Vec<f64>, offset: Vec<f64>, design: Design) -> Result<Self> {
        let n = design.n_rows();
        if outcome.len() != n || offset.len() != n {
            return Err(Error::invalid("outcome, offset and design have different lengths"));
        }
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("offset has non-finite values"));
        }
        if outcome.iter().any(|&y| !(y.is_finite() && y >= 0.0) || y.fract() != 0.0) {
            return Err(Error::invalid("outcome must hold nonnegative integer counts"));
        }
        Ok(Self { outcome, offset, design })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Relative deviance change, |D_k - D_{k-1}| / (|D_k| + 0.1).
    pub tolerance: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { max_iter: 50, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Inverse Fisher information at the estimate.
    pub covariance: Vec<Vec<f64>>,
    pub n_iter: usize,
    pub converged: bool,
    pub deviance: f64,
    pub n_obs: usize,
    pub max_abs_score: f64,
}

impl GlmFit {
    pub fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    pub fn coef(&self, name: &str) -> Result<f64> {
        Ok(self.coefficients[self.index(name)?])
    }

    pub fn se(&self, name: &str) -> Result<f64> {
        let j = self.index(name)?;
        Ok(self.covariance[j][j].max(0.0).sqrt())
    }

    pub fn variance(&self, j: usize) -> f64 {
        self.covariance[j][j]
    }
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y.iter().zip(mu).map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m }).sum::<f64>()
}

struct Working {
    mu: Vec<f64>,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

fn working(spec: &DesignSpec, beta: &[f64]) -> Working {
    let d = &spec.design;
    let (n, p) = (d.n_rows(), d.n_cols());
    let mut mu = Vec::with_capacity(n);
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let m = (spec.offset[i] + d.linear_predictor(i, beta)).exp();
        mu.push(m);
        let resid = spec.outcome[i] - m;
        for a in 0..p {
            let xa = d.columns[a][i];
            score[a] += xa * resid;
            let w = m * xa;
            for b in 0..=a {
                info[(a, b)] += w * d.columns[b][i];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    Working { mu, score, info }
}

fn deviance_at(spec: &DesignSpec, beta: &[f64]) -> f64 {
    let mu: Vec<f64> =
        (0..spec.design.n_rows()).map(|i| (spec.offset[i] + spec.design.linear_predictor(i, beta)).exp()).collect();
    poisson_deviance(&spec.outcome, &mu)
}

pub fn fit_poisson(spec: &DesignSpec) -> Result<GlmFit> {
    fit_poisson_with(spec, &IrlsOptions::default())
}

/// Maximum-likelihood Poisson regression by iteratively reweighted least
/// squares (Newton's method under the canonical log link), with step halving
/// when the deviance increases.
///
/// Non-convergence is reported through `converged = false`, not as an error.
pub fn fit_poisson_with(spec: &DesignSpec, opts: &IrlsOptions) -> Result<GlmFit> {
    spec.design.check_rank()?;
    let p = spec.design.n_cols();
    let total_y: f64 = spec.outcome.iter().sum();
    if total_y <= 0.0 {
        return Err(Error::invalid("all outcome counts are zero; the Poisson MLE does not exist"));
    }
    let total_exposure: f64 = spec.offset.iter().map(|o| o.exp()).sum();
    let mut beta = vec![0.0; p];
    beta[0] = (total_y / total_exposure).ln();

    let mut dev = deviance_at(spec, &beta);
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < opts.max_iter {
        n_iter += 1;
        let w = working(spec, &beta);
        let chol = w
            .info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularDesign("Fisher information is not positive definite".into()))?;
        let step = chol.solve(&w.score);
        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        let mut new_dev;
        loop {
            candidate = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            new_dev = deviance_at(spec, &candidate);
            if new_dev.is_finite() && new_dev <= dev * (1.0 + 1e-12) + 1e-12 || scale < 1e-8 {
                break;
            }
            scale *= 0.5;
        }
        if !new_dev.is_finite() {
            break;
        }
        let change = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        beta = candidate;
        dev = new_dev;
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }

    let w = working(spec, &beta);
    let max_abs_score = w.score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if converged && max_abs_score > 1e-8 * total_y.max(1.0) {
        converged = false;
    }
    let cov = w
        .info
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("Fisher information is not positive definite at the estimate".into()))?
        .inverse();
    Ok(GlmFit {
        names: spec.design.names.clone(),
        coefficients: beta,
        covariance: symmetric_rows(&cov),
        n_iter,
        converged,
        deviance: poisson_deviance(&spec.outcome, &w.mu),
        n_obs: spec.design.n_rows(),
        max_abs_score,
    })
}

fn symmetric_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let p = m.nrows();
    (0..p).map(|i| (0..p).map(|j| 0.5 * (m[(i, j)] + m[(j, i)])).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// sqrt(RSS / (n - p)).
    pub residual_sd: f64,
    /// residual_sd^2 (X'X)^-1.
    pub covariance: Vec<Vec<f64>>,
    /// (X'X)^-1.
    pub unscaled_covariance: Vec<Vec<f64>>,
    pub r_squared_adj: f64,
    pub residuals: Vec<f64>,
    pub n_obs: usize,
}

impl OlsFit {
    pub fn coef(&self, name: &str) -> Result<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
            .ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    pub fn df_resid(&self) -> usize {
        self.n_obs - self.names.len()
    }
}

/// Least squares via Householder QR.
pub fn fit_ols(outcome: &[f64], design: &Design) -> Result<OlsFit> {
    let (n, p) = (design.n_rows(), design.n_cols());
    if outcome.len() != n {
        return Err(Error::invalid("outcome and design have different lengths"));
    }
    if outcome.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("outcome has non-finite values"));
    }
    design.check_rank()?;
    let x = design.matrix();
    let y = DVector::from_column_slice(outcome);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let beta =
        r.solve_upper_triangular(&qty).ok_or_else(|| Error::SingularDesign("triangular factor is singular".into()))?;
    let residuals: Vec<f64> = (&y - &x * &beta).iter().copied().collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::SingularDesign("triangular factor is singular".into()))?;
    let unscaled = &r_inv * r_inv.transpose();
    let y_mean = outcome.iter().sum::<f64>() / n as f64;
    let tss: f64 = outcome.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let r_squared_adj = if tss > 0.0 {
        1.0 - (rss / df) / (tss / (n - 1) as f64)
    } else if rss == 0.0 {
        1.0
    } else {
        f64::NAN
    };
    Ok(OlsFit {
        names: design.names.clone(),
        coefficients: beta.iter().copied().collect(),
        residual_sd: sigma2.sqrt(),
        covariance: symmetric_rows(&(&unscaled * sigma2)),
        unscaled_covariance: symmetric_rows(&unscaled),
        r_squared_adj,
        residuals,
        n_obs: n,
    })
}

/// estimate ± z_{(1+level)/2} se.
pub fn wald_interval(fit: &GlmFit, coef_name: &str, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let est = fit.coef(coef_name)?;
    let half = normal_critical(level) * fit.se(coef_name)?;
    Ok((est - half, est + half))
}
