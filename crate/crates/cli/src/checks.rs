//! Invariant and cross-method checks behind `verify` and the acceptance
//! target. Every tolerance is fixed here.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::Result;
use bbmlab::analytic::{
    ballot_density, ballot_lower_bound, ballot_upper_bound, centering, gamma, log_gamma, stay_below_prob,
};
use bbmlab::bridge::stay_below_line_prob_mc;
use bbmlab::diagnostics::{moment_identity_checks, run_conditioned_diagnostics_with_maxima, DiagnosticsOptions};
use bbmlab::estimators::{
    cstar_estimate, deviation_probability, sample_maxima, tail_curve, LambdaOptions, StderrMode,
};
use bbmlab::quad::adaptive_simpson;
use bbmlab::rng::Stream;
use bbmlab::sim::{sample_max, Workspace};
use bbmlab::stats::{binomial_estimate, ks_discrete, Method, Moments};
use bbmlab::{BallotParams, DeviationQuery, FunctionalSpec, GridSpec, Replicas, SimConfig};
use serde::Serialize;

/// Outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<u8>,
    pub passed: bool,
    pub detail: String,
    pub values: BTreeMap<String, f64>,
    #[serde(skip)]
    pub elapsed_secs: f64,
    #[serde(skip)]
    pub budget_secs: Option<f64>,
}

impl Check {
    fn new(name: &str, criterion: Option<u8>) -> Self {
        Check {
            name: name.to_string(),
            criterion,
            passed: true,
            detail: String::new(),
            values: BTreeMap::new(),
            elapsed_secs: 0.0,
            budget_secs: None,
        }
    }

    fn value(&mut self, key: &str, v: f64) -> &mut Self {
        self.values.insert(key.to_string(), v);
        self
    }

    /// Records a condition; the check fails if any condition fails.
    fn require(&mut self, ok: bool, what: impl Into<String>) -> &mut Self {
        let what = what.into();
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(if ok { "ok " } else { "FAILED " });
        self.detail.push_str(&what);
        self.passed &= ok;
        self
    }

    fn timed(mut self, start: Instant, budget: Option<f64>) -> Self {
        self.elapsed_secs += start.elapsed().as_secs_f64();
        self.budget_secs = budget;
        self
    }

    /// Passed, and within its runtime budget when one is set.
    pub fn within_budget(&self) -> bool {
        self.budget_secs.is_none_or(|b| self.elapsed_secs <= b)
    }
}

pub const SUITES: &[&str] = &["analytic", "bridge", "sim", "estimators", "diagnostics", "all"];

/// Fixed offsets separating the replica sets of different checks.
mod tags {
    pub const YULE: u64 = 0x01;
    pub const MANY_TO_ONE: u64 = 0x02;
    pub const MANY_TO_TWO: u64 = 0x03;
    pub const BALLOT: u64 = 0x04;
    pub const DIRECT: u64 = 0x05;
    pub const CURVE: u64 = 0x06;
    pub const CSTAR: u64 = 0x07;
    pub const LEAF: u64 = 0x08;
}

/// Replica counts; `full()` holds the acceptance sizes.
#[derive(Debug, Clone, Copy)]
pub struct Sizes {
    pub yule: u64,
    pub moments: u64,
    pub ballot_per_point: u64,
    pub ballot_steps: usize,
    pub direct: u64,
    pub hybrid_curve: u64,
    pub cstar_short: u64,
    pub cstar_long: u64,
}

impl Sizes {
    pub fn full() -> Self {
        Sizes {
            yule: 100_000,
            moments: 100_000,
            ballot_per_point: 1_000_000,
            ballot_steps: 32,
            direct: 200_000,
            hybrid_curve: 500_000,
            cstar_short: 500_000,
            cstar_long: 100_000,
        }
    }
}

/// Shared state for one verification run: the large direct simulations are
/// computed once and reused by every check that needs them.
pub struct Context {
    pub seed: u64,
    pub workers: usize,
    pub sizes: Sizes,
    pub sim: SimConfig,
    maxima: BTreeMap<u64, OnceLock<(Vec<f64>, f64)>>,
}

const DIRECT_HORIZONS: [f64; 2] = [10.0, 12.0];

impl Context {
    pub fn new(seed: u64, workers: usize, sizes: Sizes, sim: SimConfig) -> Self {
        let maxima = DIRECT_HORIZONS.iter().map(|t| (t.to_bits(), OnceLock::new())).collect();
        Context { seed, workers, sizes, sim, maxima }
    }

    fn replicas(&self, tag: u64, n: u64) -> Replicas {
        Replicas::new(self.seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)), n).with_workers(self.workers)
    }

    fn direct_replicas(&self) -> Replicas {
        self.replicas(tags::DIRECT, self.sizes.direct)
    }

    /// Maxima of the shared direct run at horizon `t` and the seconds it took.
    pub fn direct_maxima(&self, t: f64) -> Result<&(Vec<f64>, f64)> {
        let cell = self.maxima.get(&t.to_bits()).expect("shared horizon");
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let start = Instant::now();
        let m = sample_maxima(t, &self.direct_replicas(), &self.sim)?;
        Ok(cell.get_or_init(|| (m, start.elapsed().as_secs_f64())))
    }
}

/// Runs one named suite.
pub fn run_suite(suite: &str, ctx: &Context) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    match suite {
        "analytic" => {
            out.push(centering_and_gamma());
            out.push(ballot_mass());
            out.push(ballot_sandwich_scan(10_000));
        }
        "bridge" => out.push(ballot_vs_bridge(ctx)?),
        "sim" => {
            out.push(yule_law(ctx)?);
            out.push(leaf_variance(ctx)?);
            out.push(many_to_one(ctx)?);
            out.push(many_to_two(ctx)?);
        }
        "estimators" => {
            out.push(cross_method(ctx, 10.0, 3.0, 4.0)?);
            out.push(cross_method(ctx, 12.0, 4.0, 5.0)?);
            out.push(gamma_band(ctx)?);
            out.push(cstar_consistency(ctx)?);
        }
        "diagnostics" => out.push(conditioned(ctx)?),
        "all" => {
            for s in SUITES.iter().filter(|s| **s != "all") {
                out.extend(run_suite(s, ctx)?);
            }
        }
        other => anyhow::bail!(crate::config::ConfigError::new(format!(
            "unknown suite {other:?}; expected one of {}",
            SUITES.join(", ")
        ))),
    }
    Ok(out)
}

/// Centering and deviation function against high-precision values.
pub fn centering_and_gamma() -> Check {
    let start = Instant::now();
    let mut c = Check::new("centering_and_gamma", None);
    let m = centering(std::f64::consts::E.powi(2)).unwrap_or(f64::NAN);
    c.value("m_e2", m).require((m - 8.328_383_004_683_717).abs() < 1e-12, "m_{e^2} matches 8.328383004683717");
    let g = gamma(100.0, 10.0).unwrap_or(f64::NAN);
    c.value("gamma_100_10", g)
        .require((g / 7.130_719_117_123_102e-6 - 1.0).abs() < 1e-12, "gamma_100(10) matches 7.130719117123102e-6");
    let mut worst = 0.0f64;
    for i in 0..200 {
        let t = 2.0 + i as f64 * 5.0;
        let x = 0.05 + (i % 17) as f64 * 0.9;
        let (lg, g) = (log_gamma(t, x).unwrap_or(f64::NAN), gamma(t, x).unwrap_or(f64::NAN));
        worst = worst.max((lg - g.ln()).abs());
    }
    c.value("log_identity_err", worst).require(worst < 1e-12, "log gamma = ln gamma on 200 points");
    c.timed(start, None)
}

/// Closed-form stay-below probability equals the integrated ballot density.
pub fn ballot_mass() -> Check {
    let start = Instant::now();
    let mut c = Check::new("ballot_density_mass", None);
    let mut worst = 0.0f64;
    for &x1 in &[0.5, 1.0, 2.0] {
        for &x2 in &[0.5, 1.0, 2.0] {
            for &t in &[0.5, 1.0, 2.0] {
                let p = BallotParams { x1, x2, horizon: t };
                let lo = -12.0 * t.sqrt();
                let mass = adaptive_simpson(|y| ballot_density(&p, y), lo, x2, 1e-13);
                worst = worst.max((mass - stay_below_prob(&p)).abs());
            }
        }
    }
    c.value("max_abs_err", worst).require(worst < 1e-9, "density integrates to the closed form");
    c.timed(start, None)
}

/// Upper and lower ballot bounds bracket the exact density on a
/// deterministic scan of `points` parameter tuples.
pub fn ballot_sandwich_scan(points: usize) -> Check {
    let start = Instant::now();
    let mut c = Check::new("ballot_sandwich", Some(5));
    let side = (points as f64).powf(0.25).ceil() as usize;
    let axis = |k: usize, lo: f64, hi: f64| lo * (hi / lo).powf(k as f64 / (side - 1) as f64);
    let (mut n, mut bad, mut errors) = (0usize, 0usize, 0usize);
    'scan: for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                let (x1, x2, t) = (axis(i, 0.05, 20.0), axis(j, 0.05, 20.0), axis(k, 0.1, 100.0));
                let p = BallotParams { x1, x2, horizon: t };
                for m in 0..side {
                    if n == points {
                        break 'scan;
                    }
                    n += 1;
                    // x1 (x2 - y) runs over (0, t]; the last point sits on the boundary
                    let frac = (m + 1) as f64 / side as f64 * (1.0 - 1e-12);
                    let y = x2 - frac * t / x1;
                    let exact = ballot_density(&p, y);
                    match (ballot_lower_bound(&p, y), ballot_upper_bound(&p, y)) {
                        (Ok(lo), Ok(hi)) => {
                            if !(lo <= exact * (1.0 + 1e-12) && exact <= hi * (1.0 + 1e-12)) {
                                bad += 1;
                            }
                        }
                        _ => errors += 1,
                    }
                }
            }
        }
    }
    c.value("points", n as f64).value("violations", bad as f64);
    c.require(n == points, format!("{n} of {points} points scanned"))
        .require(errors == 0, format!("{errors} bound evaluations rejected"))
        .require(bad == 0, format!("{bad} sandwich violations"));
    c.timed(start, Some(1.0))
}

/// Closed-form stay-below probability against the bridge oracle on the
/// 3x3x3 grid `(x1, x2, t) in {0.5, 1, 2}^3`.
pub fn ballot_vs_bridge(ctx: &Context) -> Result<Check> {
    let start = Instant::now();
    let mut c = Check::new("ballot_vs_bridge_oracle", Some(4));
    let grid = [0.5, 1.0, 2.0];
    let mut worst = 0.0f64;
    let mut k = 0u64;
    for &x1 in &grid {
        for &x2 in &grid {
            for &t in &grid {
                let p = BallotParams::new(x1, x2, t)?;
                let reps = ctx.replicas(tags::BALLOT.wrapping_add(k << 8), ctx.sizes.ballot_per_point);
                k += 1;
                let mc = stay_below_line_prob_mc(&p, (f64::NEG_INFINITY, f64::INFINITY), ctx.sizes.ballot_steps, &reps)?;
                let z = mc.z_to(stay_below_prob(&p));
                worst = worst.max(z.abs());
            }
        }
    }
    c.value("max_abs_z", worst).require(worst <= 3.0, format!("max |z| = {worst:.2} over 27 points (<= 3)"));
    Ok(c.timed(start, Some(300.0)))
}

/// Population at `t = 5`: mean `e^5` and geometric law.
pub fn yule_law(ctx: &Context) -> Result<Check> {
    let start = Instant::now();
    let t = 5.0;
    let mut c = Check::new("yule_law", Some(1));
    let reps = ctx.replicas(tags::YULE, ctx.sizes.yule);
    let counts = reps.map(|i| {
        let mut ws = Workspace::default();
        Ok(sample_max(t, &ctx.sim, &mut reps.rng(Stream::Tree, i), &mut ws)?.1)
    })?;
    let mut m = Moments::default();
    counts.iter().for_each(|&k| m.push(k as f64));
    let z = m.estimate(Method::Direct).z_to(t.exp());
    let q = (-t).exp();
    let (d, p) = ks_discrete(&counts, |k| 1.0 - (1.0 - q).powf(k as f64));
    c.value("mean", m.mean()).value("stderr", m.stderr()).value("z", z).value("ks_d", d).value("ks_p", p);
    c.require(z.abs() <= 3.0, format!("mean {:.3} vs e^5 = {:.3}, |z| = {:.2}", m.mean(), t.exp(), z.abs()))
        .require(p > 0.01, format!("KS p = {p:.3} against Geometric(e^-5)"));
    Ok(c.timed(start, Some(60.0)))
}

/// A uniformly chosen leaf at `t = 4` is `N(0, 4)`.
pub fn leaf_variance(ctx: &Context) -> Result<Check> {
    let start = Instant::now();
    let t = 4.0;
    let mut c = Check::new("leaf_variance", None);
    let reps = ctx.replicas(tags::LEAF, ctx.sizes.moments);
    let picks = reps.map(|i| {
        let mut rng = reps.rng(Stream::Tree, i);
        let tree = bbmlab::SkeletonTree::simulate(t, &ctx.sim, &mut rng)?;
        let mut pick = reps.rng(Stream::Gauss, i);
        let leaf = tree.leaves[rand::Rng::random_range(&mut pick, 0..tree.leaves.len())];
        Ok(tree.nodes[leaf as usize].position_at_end)
    })?;
    let mut sq = Moments::default();
    picks.iter().for_each(|&x| sq.push(x * x));
    let z = sq.estimate(Method::Direct).z_to(t);
    c.value("second_moment", sq.mean()).value("z", z);
    c.require(z.abs() <= 3.0, format!("E[X^2] = {:.4} vs 4, |z| = {:.2}", sq.mean(), z.abs()));
    Ok(c.timed(start, None))
}

/// Many-to-one at `(t, a) = (3, 2)`.
pub fn many_to_one(ctx: &Context) -> Result<Check> {
    let start = Instant::now();
    let mut c = Check::new("many_to_one", Some(2));
    let reps = ctx.replicas(tags::MANY_TO_ONE, ctx.sizes.moments);
    let r = moment_identity_checks(3.0, &FunctionalSpec::EndpointAbove { level: 2.0 }, &reps, &ctx.sim)?;
    let one = &r.checks[0];
    c.value("lhs", one.lhs.value).value("rhs", one.rhs).value("z", one.z);
    c.require(one.z.abs() <= 3.0, format!("E[#above 2] = {} vs {:.6}, |z| = {:.2}", one.lhs, one.rhs, one.z.abs()));
    Ok(c.timed(start, Some(60.0)))
}

/// Many-to-two at `t = 2` for `F = 1` and `F = both endpoints > 0`.
pub fn many_to_two(ctx: &Context) -> Result<Check> {
    let start = Instant::now();
    let mut c = Check::new("many_to_two", Some(3));
    for (label, spec) in [("constant", FunctionalSpec::Constant), ("both_positive", FunctionalSpec::EndpointAbove { level: 0.0 })] {
        let reps = ctx.replicas(tags::MANY_TO_TWO, ctx.sizes.moments);
        let r = moment_identity_checks(2.0, &spec, &reps, &ctx.sim)?;
        let two = &r.checks[1];
        c.value(&format!("{label}_lhs"), two.lhs.value)
            .value(&format!("{label}_rhs"), two.rhs)
            .value(&format!("{label}_z"), two.z);
        c.require(two.z.abs() <= 3.0, format!("{label}: {} vs {:.6}, |z| = {:.2}", two.lhs, two.rhs, two.z.abs()));
    }
    Ok(c.timed(start, Some(120.0)))
}

fn hybrid(ctx: &Context, t: f64, x: f64, ell: f64) -> Result<bbmlab::Estimate> {
    let reps = ctx.replicas(tags::CURVE.wrapping_add(ell.to_bits()), ctx.sizes.hybrid_curve);
    let curve = tail_curve(ell, &reps, &GridSpec::for_ell(ell), &ctx.sim)?;
    let q = DeviationQuery::new(t, x, ell)?;
    Ok(deviation_probability(&q, &curve, &LambdaOptions::default())?)
}

/// Hybrid estimate against the direct frequency.
pub fn cross_method(ctx: &Context, t: f64, x: f64, ell: f64) -> Result<Check> {
    let (maxima, direct_secs) = ctx.direct_maxima(t)?;
    let start = Instant::now();
    let mut c = Check::new(&format!("cross_method_t{t}_x{x}_ell{ell}"), Some(6));
    c.elapsed_secs = *direct_secs;
    let level = centering(t)? + x;
    let hits = maxima.iter().filter(|&&m| m > level).count() as u64;
    let direct = binomial_estimate(hits, maxima.len() as u64, Method::Direct);
    let hyb = hybrid(ctx, t, x, ell)?;
    let combined = direct.stderr.hypot(hyb.stderr);
    let gap = (hyb.value - direct.value).abs();
    let allowed = 3.0 * combined + 0.25 * direct.value;
    c.value("direct", direct.value)
        .value("direct_stderr", direct.stderr)
        .value("hybrid", hyb.value)
        .value("hybrid_stderr", hyb.stderr)
        .value("allowed", allowed);
    c.require(direct.n_replicas >= 200_000 || ctx.sizes.direct < 200_000, format!("direct n = {}", direct.n_replicas))
        .require(gap <= allowed, format!("|{:.4e} - {:.4e}| = {gap:.3e} <= {allowed:.3e}", hyb.value, direct.value));
    Ok(c.timed(start, Some(600.0)))
}

/// Ratio `P/gamma_t(x)` at `t = 12` for `x = 3, 4, 5` in the band fitted at
/// `x = 3`.
pub const GAMMA_BAND_FACTOR: f64 = 2.0;

pub fn gamma_band(ctx: &Context) -> Result<Check> {
    let t = 12.0;
    let (maxima, direct_secs) = ctx.direct_maxima(t)?;
    let start = Instant::now();
    let mut c = Check::new("gamma_sandwich_t12", Some(7));
    c.elapsed_secs = *direct_secs;
    let m = centering(t)?;
    let ratios: Vec<(f64, f64)> = [3.0, 4.0, 5.0]
        .iter()
        .map(|&x| {
            let hits = maxima.iter().filter(|&&v| v > m + x).count() as u64;
            let e = binomial_estimate(hits, maxima.len() as u64, Method::Direct);
            let g = gamma(t, x).unwrap_or(f64::NAN);
            (x, e.value / g)
        })
        .collect();
    let anchor = ratios[0].1;
    let (lo, hi) = (anchor / GAMMA_BAND_FACTOR, anchor * GAMMA_BAND_FACTOR);
    c.value("c1", lo).value("c2", hi);
    c.require(anchor > 0.0, format!("ratio at x = 3 is {anchor:.4}"));
    for &(x, r) in &ratios {
        c.value(&format!("ratio_x{x}"), r);
        c.require(r > 0.0 && r >= lo && r <= hi, format!("x = {x}: ratio {r:.4} in [{lo:.4}, {hi:.4}]"));
    }
    Ok(c.timed(start, Some(900.0)))
}

/// Limiting-constant estimates at `ell = 8` and `ell = 12` agree within 20%.
pub fn cstar_consistency(ctx: &Context) -> Result<Check> {
    let start = Instant::now();
    let mut c = Check::new("cstar_consistency", Some(8));
    let mut values = Vec::new();
    for (ell, n) in [(8.0f64, ctx.sizes.cstar_short), (12.0, ctx.sizes.cstar_long)] {
        let reps = ctx.replicas(tags::CSTAR.wrapping_add(ell.to_bits()), n);
        let curve = tail_curve(ell, &reps, &GridSpec::for_ell(ell), &ctx.sim)?;
        match cstar_estimate(&curve, StderrMode::default()) {
            Ok(e) => {
                let ratio = e.truncation_bound / e.estimate.value;
                c.value(&format!("cstar_ell{ell}"), e.estimate.value)
                    .value(&format!("stderr_ell{ell}"), e.estimate.stderr)
                    .value(&format!("truncation_ratio_ell{ell}"), ratio)
                    .value(&format!("reach_ell{ell}"), e.reach);
                c.require(ratio < 0.01, format!("ell = {ell}: truncation {:.2e} of estimate", ratio));
                values.push(e.estimate.value);
            }
            Err(err) => {
                if let bbmlab::Error::InsufficientReach { bound, ratio } = err {
                    c.value(&format!("cstar_ell{ell}"), 100.0 * bound / ratio)
                        .value(&format!("truncation_ratio_ell{ell}"), ratio / 100.0);
                }
                c.value(&format!("reach_ell{ell}"), curve.reach());
                c.require(false, format!("ell = {ell}: {err}"));
            }
        }
    }
    if let [a, b] = values[..] {
        let rel = (b / a - 1.0).abs();
        c.value("relative_difference", rel);
        c.require(rel <= 0.2, format!("C*(8) = {a:.4}, C*(12) = {b:.4}, |ratio - 1| = {rel:.3} <= 0.2"));
    }
    Ok(c.timed(start, Some(1200.0)))
}

/// Conditioned structure at `(12, 4, 5)` plus the second-moment ratio at
/// `ell = 6` and `ell = 2`.
pub fn conditioned(ctx: &Context) -> Result<Check> {
    let t = 12.0;
    let (maxima, direct_secs) = ctx.direct_maxima(t)?;
    let start = Instant::now();
    let mut c = Check::new("conditioned_diagnostics_t12_x4", Some(9));
    c.elapsed_secs = *direct_secs;
    let queries = [5.0, 6.0, 2.0].map(|ell| DeviationQuery::new(t, 4.0, ell)).into_iter().collect::<Result<Vec<_>, _>>()?;
    let opts = DiagnosticsOptions { sim: ctx.sim };
    let stats = run_conditioned_diagnostics_with_maxima(&queries, &ctx.direct_replicas(), maxima, &opts)?;
    let main = &stats[0];
    c.value("successes", main.n_success as f64);
    c.require(main.n_success >= 300, format!("{} successes (>= 300)", main.n_success));
    match main.single_minus_multiple() {
        Some(d) => {
            c.value("p1_minus_p2plus", d.value).value("p1_minus_p2plus_stderr", d.stderr);
            c.require(d.value >= 3.0 * d.stderr, format!("P(L=1) - P(L>=2) = {:.3} >= 3 x {:.3}", d.value, d.stderr))
        }
        None => c.require(false, "no successes for the multiplicity test"),
    };
    match main.crossing_rate() {
        Some(g) => {
            c.value("crossing_rate", g.value);
            c.require(g.value < 0.2, format!("P(G | success) = {:.3} < 0.2", g.value))
        }
        None => c.require(false, "no successes for the crossing rate"),
    };
    match main.gap_window_fraction() {
        Some(f) => {
            c.value("gap_window_fraction", f.value);
            c.require(f.value >= 0.5, format!("gap mass in window {:.3} >= 0.5", f.value))
        }
        None => c.require(false, "no gap samples"),
    };
    match (stats[1].second_moment_ratio(), stats[2].second_moment_ratio()) {
        (Some(r6), Some(r2)) => {
            c.value("ratio_ell6", r6.value).value("ratio_ell2", r2.value);
            c.require(r6.value < r2.value, format!("E[L^2]/E[L]: ell 6 {:.4} < ell 2 {:.4}", r6.value, r2.value))
        }
        _ => c.require(false, "second-moment ratio undefined"),
    };
    Ok(c.timed(start, Some(1200.0)))
}
