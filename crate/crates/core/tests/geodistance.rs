use std::collections::BTreeSet;

use foodprox::geodistance::{
    build_proximity_table, candidate_stores, distance_matrix, haversine_distance, straight_line_proximity,
    ProximityOptions, SyntheticProvider, EARTH_RADIUS_MILES,
};
use foodprox::{Coordinate, Site};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = Coordinate> {
    (-89.0..89.0f64, -179.0..179.0f64).prop_map(|(a, b)| Coordinate::new(a, b).unwrap())
}

fn region(n: usize, seed: u64, prefix: &str) -> Vec<Site> {
    use rand::Rng;
    let mut r = foodprox::rng::seeded(seed);
    (0..n)
        .map(|i| {
            let c = Coordinate::new(35.8 + r.random::<f64>() * 0.6, -80.6 + r.random::<f64>() * 0.9).unwrap();
            Site::new(format!("{prefix}{i:03}"), c)
        })
        .collect()
}

proptest! {
    #[test]
    fn haversine_is_a_metric(a in coord(), b in coord(), c in coord()) {
        let d = |x, y| haversine_distance(x, y, EARTH_RADIUS_MILES).unwrap();
        prop_assert!(d(a, b) >= 0.0);
        prop_assert!((d(a, b) - d(b, a)).abs() <= 1e-9 * d(a, b).max(1.0));
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-6);
        prop_assert!(d(a, b) <= std::f64::consts::PI * EARTH_RADIUS_MILES + 1e-6);
    }

    #[test]
    fn candidates_contain_the_straight_line_nearest(seed in 0u64..500, p in 0.01..1.0f64) {
        let stores = region(40, seed, "s");
        let center = region(1, seed + 1000, "n")[0].coord;
        let near = straight_line_proximity(center, &stores, EARTH_RADIUS_MILES).unwrap();
        let cand = candidate_stores(center, &stores, p, EARTH_RADIUS_MILES).unwrap();
        prop_assert_eq!(&cand[0].id, &near.store_id);
        let worst = haversine_distance(center, cand.last().unwrap().coord, EARTH_RADIUS_MILES).unwrap();
        for s in &stores {
            if !cand.iter().any(|c| c.id == s.id) {
                prop_assert!(haversine_distance(center, s.coord, EARTH_RADIUS_MILES).unwrap() >= worst);
            }
        }
    }
}

#[test]
fn matrix_matches_pairwise_calls() {
    let (o, s) = (region(7, 1, "n"), region(11, 2, "s"));
    let m = distance_matrix(&o, &s, EARTH_RADIUS_MILES).unwrap();
    for (i, a) in o.iter().enumerate() {
        for (j, b) in s.iter().enumerate() {
            assert_eq!(m[i * s.len() + j], haversine_distance(a.coord, b.coord, EARTH_RADIUS_MILES).unwrap());
        }
    }
}

#[test]
fn synthetic_factor_scales_straight_line_proximity() {
    let (n, s) = (region(30, 3, "n"), region(60, 4, "s"));
    let all: BTreeSet<String> = n.iter().map(|s| s.id.clone()).collect();
    let provider = SyntheticProvider::new(0.7).unwrap();
    let t = build_proximity_table(&n, &s, &provider, &all, &ProximityOptions::default()).unwrap();
    assert!(t.warnings.is_empty());
    for p in &t.pairs {
        let x = p.x().unwrap();
        assert!((x - p.x_star() / 0.7).abs() <= 1e-12 * x);
    }
}

#[test]
fn unqueried_table_has_no_map_values() {
    let (n, s) = (region(10, 5, "n"), region(20, 6, "s"));
    let t = build_proximity_table(
        &n,
        &s,
        &SyntheticProvider::new(0.8).unwrap(),
        &BTreeSet::new(),
        &ProximityOptions::default(),
    )
    .unwrap();
    assert!(t.pairs.iter().all(|p| p.x().is_none()));
    let ids: Vec<&str> = t.pairs.iter().map(|p| p.id()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn provider_shorter_than_arc_warns() {
    let (n, s) = (region(3, 7, "n"), region(5, 8, "s"));
    let all: BTreeSet<String> = n.iter().map(|s| s.id.clone()).collect();
    let t = build_proximity_table(&n, &s, &SyntheticProvider::new(1.5).unwrap(), &all, &ProximityOptions::default())
        .unwrap();
    assert!(!t.warnings.is_empty());
}
