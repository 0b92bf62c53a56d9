//! Reference implementations used only by tests. They share no code with
//! the library beyond plain data types.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Solves A x = b by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Inverse by solving against unit vectors.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> =
        (0..n).map(|j| solve(a.to_vec(), (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())).collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Poisson log-likelihood maximized by plain Newton-Raphson from beta = 0
/// with the intercept at log(sum y / sum exp(offset)). Rows of `x` include
/// the intercept column. Returns (beta, inverse Fisher information).
pub fn newton_poisson(y: &[f64], offset: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = x[0].len();
    let mut beta = vec![0.0; p];
    beta[0] = (y.iter().sum::<f64>() / offset.iter().map(|o| o.exp()).sum::<f64>()).ln();
    let info = |beta: &[f64]| {
        let mut h = vec![vec![0.0; p]; p];
        let mut g = vec![0.0; p];
        for (i, row) in x.iter().enumerate() {
            let mu = (offset[i] + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()).exp();
            for j in 0..p {
                g[j] += (y[i] - mu) * row[j];
                for k in 0..p {
                    h[j][k] += mu * row[j] * row[k];
                }
            }
        }
        (g, h)
    };
    for _ in 0..200 {
        let (g, h) = info(&beta);
        let step = solve(h, g);
        for j in 0..p {
            beta[j] += step[j];
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
    }
    let (_, h) = info(&beta);
    (beta, invert(&h))
}

/// Least squares via the normal equations X'X b = X'y.
pub fn normal_equations(y: &[f64], x: &[Vec<f64>]) -> Vec<f64> {
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        for j in 0..p {
            xty[j] += row[j] * yi;
            for k in 0..p {
                xtx[j][k] += row[j] * row[k];
            }
        }
    }
    solve(xtx, xty)
}

/// Moran's I from a dense weight matrix by the textbook double sum.
pub fn moran_double_sum(v: &[f64], w: &[Vec<f64>]) -> f64 {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut s0 = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[i][j] * (v[i] - mean) * (v[j] - mean);
            s0 += w[i][j];
        }
    }
    let den: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    n as f64 / s0 * num / den
}

/// Truncated normal draws by rejection from the untruncated normal.
pub fn rejection_truncated_normal<R: Rng>(mu: f64, sigma: f64, lo: f64, hi: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let d = Normal::new(mu, sigma).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = d.sample(rng);
        if x >= lo && x <= hi {
            out.push(x);
        }
    }
    out
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}
