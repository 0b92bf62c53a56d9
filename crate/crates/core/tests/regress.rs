#![allow(clippy::needless_range_loop)]

mod common;

use foodprox::regress::{fit_ols, fit_poisson, Design, DesignSpec};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// Random Poisson instance: (y, offset, columns without intercept).
fn instance(seed: u64) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let mut r = foodprox::rng::seeded(seed);
    let n = r.random_range(15..60);
    let p = r.random_range(1..4);
    let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| r.random::<f64>() * 4.0 - 1.0).collect()).collect();
    let beta: Vec<f64> = (0..p).map(|_| r.random::<f64>() * 0.6 - 0.3).collect();
    let offset: Vec<f64> = (0..n).map(|_| (50.0 + r.random::<f64>() * 500.0).ln()).collect();
    let y = (0..n)
        .map(|i| {
            let eta = -2.0 + offset[i] + (0..p).map(|j| beta[j] * cols[j][i]).sum::<f64>();
            Poisson::new(eta.exp()).unwrap().sample(&mut r)
        })
        .collect();
    (y, offset, cols)
}

fn design(cols: &[Vec<f64>]) -> Design {
    let mut d = Design::new(cols[0].len());
    for (j, c) in cols.iter().enumerate() {
        d.push(format!("v{j}"), c.clone()).unwrap();
    }
    d
}

fn rows(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..cols[0].len()).map(|i| std::iter::once(1.0).chain(cols.iter().map(|c| c[i])).collect()).collect()
}

#[test]
fn irls_matches_newton_on_random_instances() {
    for seed in 0..100 {
        let (y, offset, cols) = instance(seed);
        let fit = fit_poisson(&DesignSpec::new(y.clone(), offset.clone(), design(&cols)).unwrap()).unwrap();
        let (beta, cov) = common::newton_poisson(&y, &offset, &rows(&cols));
        assert!(fit.converged);
        for j in 0..beta.len() {
            assert!((fit.coefficients[j] - beta[j]).abs() < 1e-8, "seed {seed} coef {j}");
            for k in 0..beta.len() {
                assert!((fit.covariance[j][k] - cov[j][k]).abs() <= 1e-6 * cov[j][j].abs().max(1e-12), "seed {seed}");
            }
        }
    }
}

proptest! {
    #[test]
    fn ols_matches_normal_equations(seed in 0u64..10_000) {
        let mut r = foodprox::rng::seeded(seed);
        let n = r.random_range(8..40);
        let p = r.random_range(1..4);
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| r.random::<f64>() * 10.0).collect()).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + cols.iter().map(|c| 0.5 * c[i]).sum::<f64>() + r.random::<f64>()).collect();
        let fit = fit_ols(&y, &design(&cols)).unwrap();
        let oracle = common::normal_equations(&y, &rows(&cols));
        for j in 0..=p {
            prop_assert!((fit.coefficients[j] - oracle[j]).abs() < 1e-10 * oracle[j].abs().max(1.0));
        }
    }

    #[test]
    fn poisson_score_vanishes(seed in 0u64..10_000) {
        let (y, offset, cols) = instance(seed);
        let spec = DesignSpec::new(y.clone(), offset, design(&cols)).unwrap();
        let fit = fit_poisson(&spec).unwrap();
        prop_assert!(fit.max_abs_score <= 1e-8 * y.iter().sum::<f64>().max(1.0));
    }
}
