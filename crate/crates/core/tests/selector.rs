mod common;

use fovea::fixtures;
use fovea::geometry::{fit_profile, Resolution};
use fovea::selector::{select, DepthEntry, DepthProfile, Percentile, SelectError, SelectionQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_profile(rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(2..8);
    let mut e = rng.random_range(0.0..4.0);
    let mut l = rng.random_range(1.0..6.0);
    (0..n)
        .map(|_| {
            let k = (e, l);
            e += rng.random_range(1.0..10.0);
            l += rng.random_range(0.0..5.0);
            k
        })
        .collect()
}

fn random_depths(rng: &mut impl Rng) -> Vec<DepthEntry> {
    let n = rng.random_range(1..9);
    (0..n)
        .map(|i| {
            let p90 = rng.random_range(0.0..10.0);
            DepthEntry {
                depth: i + 1,
                t_tracking_ms: rng.random_range(0.1..6.0),
                p90_deg: p90,
                p95_deg: p90 + rng.random_range(0.0..5.0),
                flops: rng.random_range(0.0..1e9),
            }
        })
        .collect()
}

#[test]
fn argmin_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..500 {
        let knots = random_profile(&mut rng);
        let entries = random_depths(&mut rng);
        let percentile = if rng.random_bool(0.5) { Percentile::P90 } else { Percentile::P95 };
        let mut query = SelectionQuery::new(fit_profile(&knots).unwrap(), percentile);
        query.theta_i_deg = rng.random_range(1.0..10.0);
        let got = select(&DepthProfile::new(entries.clone()).unwrap(), &query).unwrap();

        let totals: Vec<f64> = entries
            .iter()
            .map(|e| e.t_tracking_ms + common::interp_oracle(&knots, query.theta_i_deg + percentile.of(e)))
            .collect();
        let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((got.t_total_ms - min).abs() <= 1e-9 * min, "case {case}: {} vs {min}", got.t_total_ms);
        // Ties within roundoff go to the smaller depth.
        let want = entries
            .iter()
            .zip(&totals)
            .find(|(_, &t)| t <= min + 1e-9 * min)
            .map(|(e, _)| e.depth)
            .unwrap();
        assert_eq!(got.depth, want, "case {case}");
        assert!((got.t_total_ms - got.t_tracking_ms - got.t_fr_ms).abs() < 1e-12);
    }
}

#[test]
fn bundled_operating_points() {
    let depths = fixtures::hmd_depths();
    for (res, depth, total) in [(Resolution::P720, 3, 6.19), (Resolution::P1440, 6, 16.4)] {
        let s = select(&depths, &SelectionQuery::new(fixtures::hmd_profile(res), Percentile::P95)).unwrap();
        assert_eq!(s.depth, depth, "{res}");
        assert!((s.t_total_ms - total).abs() <= 0.05, "{res}: {}", s.t_total_ms);
    }
}

#[test]
fn sensing_and_communication_do_not_move_the_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let knots = random_profile(&mut rng);
        let depths = DepthProfile::new(random_depths(&mut rng)).unwrap();
        let mut query = SelectionQuery::new(fit_profile(&knots).unwrap(), Percentile::P95);
        let base = select(&depths, &query).unwrap();
        query.t_sensing_ms = rng.random_range(0.0..5.0);
        query.t_comm_ms = rng.random_range(0.0..5.0);
        let shifted = select(&depths, &query).unwrap();
        assert_eq!(base.depth, shifted.depth);
        assert_eq!(shifted.budget.t_sensing_ms, query.t_sensing_ms);
    }
}

#[test]
fn invalid_depth_tables_are_rejected() {
    assert_eq!(DepthProfile::new(vec![]), Err(SelectError::Empty));
    let e = DepthEntry {
        depth: 3,
        t_tracking_ms: 1.0,
        p90_deg: 2.0,
        p95_deg: 3.0,
        flops: 1.0,
    };
    assert_eq!(DepthProfile::new(vec![e, e]), Err(SelectError::DuplicateDepth(3)));
    let inverted = DepthEntry { p95_deg: 1.0, ..e };
    assert!(matches!(DepthProfile::new(vec![inverted]), Err(SelectError::BadEntry { depth: 3, .. })));
    assert!(DepthProfile::read_csv("depth,t_tracking_ms\n3,1.0\n".as_bytes()).is_err());
}
