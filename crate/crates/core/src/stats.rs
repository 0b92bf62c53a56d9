//! Normal distribution helpers and the truncated-normal sampler.

use rand::Rng;
use rand_distr::Open01;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail, 1 - Φ(x), accurate for large x.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile (Wichura's AS 241, PPND16).
///
/// Relative accuracy is about 1e-16 over (0, 1). Returns ±∞ at the endpoints
/// and NaN outside [0, 1].
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r + 6.7265770927008700853e4) * r
            + 4.5921953931549871457e4)
            * r
            + 1.3731693765509461125e4)
            * r
            + 1.9715909503065514427e3)
            * r
            + 1.3314166789178437745e2)
            * r
            + 3.3871328727963666080e0)
            * q;
        let den = ((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r + 3.9307895800092710610e4) * r
            + 2.1213794301586595867e4)
            * r
            + 5.3941960214247511077e3)
            * r
            + 6.8718700749205790830e2)
            * r
            + 4.2313330701600911252e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.7454501427834140764e-4 * r + 2.2723844989269184583e-2) * r + 2.4178072517745061177e-1)
            * r
            + 1.2704582524523683826e0)
            * r
            + 3.6478483247632046050e0)
            * r
            + 5.7694972214606914055e0)
            * r
            + 4.6303378461565452959e0)
            * r
            + 1.4234371107496835773e0;
        let den = ((((((1.0507500716444168432e-9 * r + 5.4759380849953449460e-4) * r + 1.5198666563616457197e-2)
            * r
            + 1.4810397642748007459e-1)
            * r
            + 6.8976733498510000455e-1)
            * r
            + 1.6763848301838038494e0)
            * r
            + 2.0531916266377588219e0)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.0103343992922881327e-7 * r + 2.7115555687434875782e-5) * r + 1.2426609473880784386e-3)
            * r
            + 2.6532189526576123093e-2)
            * r
            + 2.9656057182850489123e-1)
            * r
            + 1.7848265399172913358e0)
            * r
            + 5.4637849111641143699e0)
            * r
            + 6.6579046435011037772e0;
        let den = ((((((2.0442631033899397856e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5)
            * r
            + 7.8686913114561325910e-4)
            * r
            + 1.4875361290850614853e-2)
            * r
            + 1.3692988092273580531e-1)
            * r
            + 5.9983220655588793769e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Two-sided critical value z such that P(|Z| <= z) = level.
pub fn normal_critical(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

/// Two-sided Student-t critical value; falls back to the normal for infinite df.
pub fn t_critical(level: f64, df: f64) -> f64 {
    if !df.is_finite() || df > 1e7 {
        return normal_critical(level);
    }
    StudentsT::new(0.0, 1.0, df).map(|t| t.inverse_cdf(0.5 + level / 2.0)).unwrap_or_else(|_| normal_critical(level))
}

/// Draw from N(mu, sigma^2) conditioned on [lower, upper] by inverting the CDF
/// over the restricted uniform range.
///
/// Intervals that sit in the upper tail are mirrored into the lower tail first
/// so the CDF values stay representable.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    let (a, b, flip) = truncation_limits(mu, sigma, lower, upper)?;
    let (pa, pb) = (normal_cdf(a), normal_cdf(b));
    if (pb - pa).is_nan() || pb - pa <= 1e-300 {
        return Err(Error::DegenerateTruncation { mu, sigma, lower, upper });
    }
    let u: f64 = rng.sample(Open01);
    let z = normal_quantile(pa + u * (pb - pa)).clamp(a, b);
    let z = if flip { -z } else { z };
    Ok((mu + sigma * z).clamp(lower, upper))
}

/// Standardized limits, mirrored when the interval lies mostly above the mean.
fn truncation_limits(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<(f64, f64, bool)> {
    if !(sigma.is_finite() && sigma > 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("truncated normal needs finite mu and sigma > 0 (mu={mu}, sigma={sigma})")));
    }
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(Error::invalid(format!("truncation bounds must satisfy lower < upper (got [{lower}, {upper}])")));
    }
    let a = (lower - mu) / sigma;
    let b = (upper - mu) / sigma;
    if a + b > 0.0 {
        Ok((-b, -a, true))
    } else {
        Ok((a, b, false))
    }
}

/// CDF of the truncated normal at `x`.
pub fn truncated_normal_cdf(x: f64, mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<f64> {
    if x <= lower {
        return Ok(0.0);
    }
    if x >= upper {
        return Ok(1.0);
    }
    let (a, b, flip) = truncation_limits(mu, sigma, lower, upper)?;
    let (pa, pb) = (normal_cdf(a), normal_cdf(b));
    if (pb - pa).is_nan() || pb - pa <= 1e-300 {
        return Err(Error::DegenerateTruncation { mu, sigma, lower, upper });
    }
    let z = (x - mu) / sigma;
    Ok(if flip { (pb - normal_cdf(-z)) / (pb - pa) } else { (normal_cdf(z) - pa) / (pb - pa) })
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with denominator n - 1.
pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
