//! Monte Carlo checks against closed forms and independent oracles. Seeds
//! are fixed, so each test is deterministic.

use bbmlab::analytic::{centering, stay_below_prob};
use bbmlab::bridge::stay_below_line_prob_mc;
use bbmlab::estimators::{
    estimate_tail_direct, lambda_expectation, sample_maxima, tail_curve, DirectOptions, LambdaOptions,
};
use bbmlab::rng::{replica_rng, Stream};
use bbmlab::stats::binomial_estimate;
use bbmlab::{BallotParams, DeviationQuery, GridSpec, Line, Method, Replicas, SimConfig, SkeletonTree, TailCurve};

#[test]
fn branch_free_crossing_matches_bridge_oracle() {
    // runs without a branch event are single Brownian paths
    let cfg = SimConfig::default();
    let line = Line::new(0.0, 1.0).unwrap();
    let (mut runs, mut crossed) = (0u64, 0u64);
    for i in 0..100_000 {
        let mut tree = SkeletonTree::simulate(1.0, &cfg, &mut replica_rng(5, Stream::Tree, i)).unwrap();
        if tree.population() != 1 {
            continue;
        }
        runs += 1;
        crossed += tree.crossed_barrier(&line, 1.0, &mut replica_rng(5, Stream::Infill, i)).unwrap() as u64;
    }
    let freq = binomial_estimate(crossed, runs, Method::Direct);
    let p = BallotParams::new(1.0, 1.0, 1.0).unwrap();
    let oracle = stay_below_line_prob_mc(&p, (f64::NEG_INFINITY, f64::INFINITY), 16, &Replicas::new(6, 200_000)).unwrap();
    let combined = freq.stderr.hypot(oracle.stderr);
    assert!(((1.0 - oracle.value) - freq.value).abs() < 3.0 * combined, "{freq} vs 1 - {oracle}");
    assert!((freq.value - (1.0 - stay_below_prob(&p))).abs() < 3.0 * freq.stderr);
}

#[test]
fn knot_only_checking_misses_crossings() {
    let cfg = SimConfig { knot_only: true, ..SimConfig::default() };
    let line = Line::new(0.0, 1.0).unwrap();
    let (mut runs, mut crossed) = (0u64, 0u64);
    for i in 0..40_000 {
        let mut tree = SkeletonTree::simulate(1.0, &cfg, &mut replica_rng(5, Stream::Tree, i)).unwrap();
        if tree.population() != 1 {
            continue;
        }
        runs += 1;
        crossed += tree.crossed_barrier_with(&line, 1.0, cfg.crossing_mode(), &mut replica_rng(5, Stream::Infill, i)).unwrap() as u64;
    }
    let freq = binomial_estimate(crossed, runs, Method::Direct);
    let exact = 1.0 - stay_below_prob(&BallotParams::new(1.0, 1.0, 1.0).unwrap());
    assert!(freq.value < exact - 5.0 * freq.stderr, "{freq} vs {exact}");
}

#[test]
fn bridge_oracle_is_monotone_in_the_line() {
    let reps = Replicas::new(9, 200_000);
    let est = |x1, x2| {
        stay_below_line_prob_mc(&BallotParams::new(x1, x2, 1.0).unwrap(), (f64::NEG_INFINITY, f64::INFINITY), 8, &reps)
            .unwrap()
            .value
    };
    let grid = [0.25, 0.5, 1.0, 2.0];
    for w in grid.windows(2) {
        assert!(est(w[0], 1.0) < est(w[1], 1.0));
        assert!(est(1.0, w[0]) < est(1.0, w[1]));
    }
}

#[test]
fn centered_maximum_median_is_bounded() {
    let maxima = sample_maxima(10.0, &Replicas::new(21, 2_000), &SimConfig::default()).unwrap();
    let m = centering(10.0).unwrap();
    let mut centered: Vec<f64> = maxima.iter().map(|v| v - m).collect();
    centered.sort_by(f64::total_cmp);
    let median = centered[centered.len() / 2];
    assert!(median.abs() < 3.0, "median {median}");
}

#[test]
fn direct_estimate_limits_and_seed_consistency() {
    let opts = DirectOptions::default();
    let certain = estimate_tail_direct(6.0, -1e6, &Replicas::new(1, 500), &opts).unwrap();
    assert_eq!(certain.value, 1.0);
    let a = estimate_tail_direct(6.0, 0.0, &Replicas::new(2, 20_000), &opts).unwrap();
    let b = estimate_tail_direct(6.0, 0.0, &Replicas::new(3, 20_000), &opts).unwrap();
    assert!(a.value > 0.0 && a.value < 1.0);
    assert!(a.z_against(&b).abs() < 3.0, "{a} vs {b}");
    assert!(estimate_tail_direct(15.0, 0.0, &Replicas::new(1, 1), &opts).is_err());
}

#[test]
fn curve_stderr_scales_with_replicas() {
    let grid = GridSpec::new(-2.0, 4.0, 0.5).unwrap();
    let sim = SimConfig::default();
    let small = tail_curve(4.0, &Replicas::new(31, 20_000), &grid, &sim).unwrap();
    let large = tail_curve(4.0, &Replicas::new(32, 40_000), &grid, &sim).unwrap();
    let k = small.grid.iter().position(|&y| y == 0.0).unwrap();
    let ratio = small.stderr[k] / large.stderr[k];
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "stderr ratio {ratio}");
    assert_eq!(small.survival_at(-50.0), 1.0);
    assert!(small.survival.windows(2).all(|w| w[0] >= w[1]));
    assert!(small.survival[0] > *small.survival.last().unwrap());
}

#[test]
fn curve_obeys_fitted_envelope_at_ell_8() {
    let ell = 8.0;
    let curve = tail_curve(ell, &Replicas::new(41, 100_000), &GridSpec::for_ell(ell), &SimConfig::default()).unwrap();
    let k = curve.envelope_constant(25.0).expect("enough hits to fit");
    let shape = |y: f64| bbmlab::analytic::curve_envelope_shape(ell, y);
    for (i, &y) in curve.grid.iter().enumerate() {
        if y < 1.0 || (curve.survival[i] * curve.n_replicas as f64) < 25.0 {
            continue;
        }
        assert!(curve.survival[i] <= k * shape(y) + 1e-12, "y = {y}: {} > {}", curve.survival[i], k * shape(y));
    }
    // the fitted constant is not driven by a single grid point
    let ratios: Vec<f64> = curve
        .grid
        .iter()
        .zip(&curve.survival)
        .filter(|(y, s)| **y >= 1.0 && **s * curve.n_replicas as f64 >= 25.0)
        .map(|(y, s)| s / shape(*y))
        .collect();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min > k / 4.0, "ratio spread {min} .. {k}");
}

#[test]
fn unit_curve_lambda_matches_bridge_oracle() {
    // with survival 1 the integral is e^{t-l} P(B_s <= g(s), s <= t - l)
    let q = DeviationQuery::new(10.0, 3.0, 4.0).unwrap();
    let grid = GridSpec::new(-3.0, 60.0, 0.005).unwrap().points();
    let ones = vec![1.0; grid.len()];
    let curve = TailCurve::from_raw(4.0, grid, ones, u64::MAX / 4, None).unwrap();
    let hybrid = lambda_expectation(&q, &curve, &LambdaOptions::default()).unwrap().total.value;
    let k = q.split_time();
    let g = q.barrier();
    let p = BallotParams::new(g.intercept, g.at(k), k).unwrap();
    let oracle = stay_below_line_prob_mc(&p, (f64::NEG_INFINITY, f64::INFINITY), 32, &Replicas::new(51, 400_000)).unwrap();
    let scale = k.exp();
    assert!(
        (hybrid - scale * oracle.value).abs() < 3.0 * scale * oracle.stderr,
        "{hybrid} vs {} ± {}",
        scale * oracle.value,
        scale * oracle.stderr
    );
}

#[test]
fn hybrid_ratio_to_gamma_is_stable_at_large_t() {
    let ell = 6.0;
    let curve = tail_curve(ell, &Replicas::new(61, 50_000), &GridSpec::for_ell(ell), &SimConfig::default()).unwrap();
    let t = 1e6;
    let ratio = |x: f64| {
        let q = DeviationQuery::new(t, x, ell).unwrap();
        let p = bbmlab::estimators::deviation_probability(&q, &curve, &LambdaOptions::default()).unwrap().value;
        p / bbmlab::analytic::gamma(t, x).unwrap()
    };
    let (r1, r2) = (ratio(30.0), ratio(60.0));
    assert!((r2 / r1 - 1.0).abs() < 0.15, "{r1} vs {r2}");
}
