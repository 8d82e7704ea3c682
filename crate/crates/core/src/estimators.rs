//! Estimators of `P(M_t > m_t + x)` and of the limiting constant.
//!
//! * [`estimate_tail_direct`]: plain frequency over full simulations.
//! * [`tail_curve`]: empirical survival of `M_l - sqrt2 l` on a grid, one
//!   replica set shared by all grid points.
//! * [`lambda_expectation`] / [`deviation_probability`]: the first-moment
//!   decomposition over the ancestor gap `y` at time `t - l`, combining the
//!   exact straight-barrier ballot density, the Girsanov factor and the
//!   tail curve at horizon `l`.
//! * [`cstar_estimate`]: `sqrt(2/pi) int_0^inf y e^{sqrt2 y} P(M_l > sqrt2 l + y) dy`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use crate::analytic::{self, centering, curve_envelope_shape, DeviationQuery};
use crate::quad::{adaptive_simpson, trapezoid_weights};
use crate::rng::{Replicas, Stream};
use crate::sim::{sample_max, SimConfig, Workspace};
use crate::stats::{binomial_estimate, Method};
use crate::{Error, Estimate, Result};

/// Largest horizon accepted by the direct estimator by default.
pub const DEFAULT_FEASIBLE_T: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectOptions {
    pub max_t: f64,
    pub sim: SimConfig,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions { max_t: DEFAULT_FEASIBLE_T, sim: SimConfig::default() }
    }
}

/// `M_t` of every replica, in replica order.
pub fn sample_maxima(t: f64, replicas: &Replicas, sim: &SimConfig) -> Result<Vec<f64>> {
    replicas.fold(
        || (Workspace::default(), Vec::new()),
        |i, (ws, out)| {
            let mut rng = replicas.rng(Stream::Tree, i);
            out.push(sample_max(t, sim, &mut rng, ws)?.0);
            Ok(())
        },
        |(_, total), (_, block)| total.extend(block),
    )
    .map(|(_, v)| v)
}

/// Frequency estimate of `P(M_t > m_t + x)` with binomial standard error.
pub fn estimate_tail_direct(t: f64, x: f64, replicas: &Replicas, opts: &DirectOptions) -> Result<Estimate> {
    Ok(estimate_tail_direct_levels(t, &[x], replicas, opts)?.remove(0))
}

/// [`estimate_tail_direct`] for several deviations from one replica set.
pub fn estimate_tail_direct_levels(
    t: f64,
    xs: &[f64],
    replicas: &Replicas,
    opts: &DirectOptions,
) -> Result<Vec<Estimate>> {
    if t > opts.max_t {
        return Err(Error::Infeasible { t, bound: opts.max_t });
    }
    if replicas.count == 0 {
        return Err(Error::domain("direct estimation needs n >= 1"));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::domain("deviation must not be NaN"));
    }
    let start = Instant::now();
    let m = centering(t)?;
    let maxima = sample_maxima(t, replicas, &opts.sim)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(xs
        .iter()
        .map(|&x| {
            let hits = maxima.iter().filter(|&&v| v > m + x).count() as u64;
            binomial_estimate(hits, replicas.count, Method::Direct)
                .with_seed(replicas.seed)
                .with_elapsed(secs)
        })
        .collect())
}

/// Grid `y_min, y_min + step, ..., y_max` for tail curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(y_min: f64, y_max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && y_max > y_min && y_min.is_finite() && y_max.is_finite()) {
            return Err(Error::domain(format!("bad grid [{y_min}, {y_max}] step {step}")));
        }
        Ok(GridSpec { y_min, y_max, step })
    }

    /// Default grid for horizon `ell`: from below the largest survival shift
    /// a hybrid query can request, to `5 sqrt(ell)`, step 0.02.
    pub fn for_ell(ell: f64) -> Self {
        GridSpec {
            y_min: -(1.0 + 0.4 * ell).ceil(),
            y_max: (5.0 * ell.sqrt()).max(ell.powf(analytic::DEFAULT_WINDOW_B)).ceil(),
            step: 0.02,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.y_max - self.y_min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.y_min + k as f64 * self.step).collect()
    }
}

/// How grid-point errors of a tail curve combine under quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StderrMode {
    /// Grid points treated as independent.
    Independent,
    /// Absolute sum of weighted errors; an upper bound under any correlation.
    Absolute,
    /// Exact binomial covariance of survival frequencies computed from one
    /// shared replica set: `Cov(S_i, S_j) = (S_max(i,j) - S_i S_j) / n`.
    #[default]
    SharedReplicas,
}

/// Empirical survival `P(M_l > sqrt2 l + y)` on an ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub ell: f64,
    pub grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_replicas: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Frequencies before isotonic correction.
    #[serde(default)]
    pub raw_survival: Vec<f64>,
    /// Raw frequencies increased somewhere by more than three standard errors.
    #[serde(default)]
    pub monotone_violation: bool,
}

/// Pool-adjacent-violators fit of a nonincreasing sequence (unit weights).
pub fn isotonic_nonincreasing(v: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    blocks.into_iter().flat_map(|(m, c)| std::iter::repeat_n(m, c)).collect()
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

impl TailCurve {
    /// Builds a curve from raw frequencies, applying the isotonic correction
    /// and recording whether it was needed beyond noise.
    pub fn from_raw(ell: f64, grid: Vec<f64>, raw: Vec<f64>, n_replicas: u64, seed: Option<u64>) -> Result<Self> {
        if grid.len() != raw.len() || grid.is_empty() {
            return Err(Error::domain("tail curve grid and values differ in length"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("tail curve grid must be strictly ascending"));
        }
        if raw.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("survival values must lie in [0, 1]"));
        }
        if n_replicas == 0 {
            return Err(Error::domain("tail curve needs n >= 1"));
        }
        let raw_se: Vec<f64> = raw.iter().map(|&p| binomial_se(p, n_replicas)).collect();
        let mut violation = false;
        let mut lowest = 0usize;
        for j in 1..raw.len() {
            if raw[j] - raw[lowest] > 3.0 * raw_se[j].hypot(raw_se[lowest]) {
                violation = true;
            }
            if raw[j] < raw[lowest] {
                lowest = j;
            }
        }
        let survival = isotonic_nonincreasing(&raw);
        let stderr = survival.iter().map(|&p| binomial_se(p, n_replicas)).collect();
        Ok(TailCurve { ell, grid, survival, stderr, n_replicas, seed, raw_survival: raw, monotone_violation: violation })
    }

    /// Survival frequencies of `samples` (already centered) on `grid`.
    pub fn from_samples(ell: f64, grid: Vec<f64>, mut samples: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let raw = grid
            .iter()
            .map(|&y| (n - samples.partition_point(|&d| d <= y)) as f64 / n as f64)
            .collect();
        Self::from_raw(ell, grid, raw, n as u64, seed)
    }

    pub fn y_max(&self) -> f64 {
        *self.grid.last().expect("nonempty grid")
    }

    /// Last grid point with an observed exceedance; the curve is empty
    /// above it whatever the grid end.
    pub fn reach(&self) -> f64 {
        self.grid
            .iter()
            .zip(&self.raw_survival)
            .rev()
            .find(|&(_, &s)| s > 0.0)
            .map_or(self.grid[0], |(&y, _)| y)
    }

    /// Largest `S(y) / shape(y)` over grid points `y >= max(0, 1 - log l)`
    /// backed by at least `min_hits` exceedances.
    pub fn envelope_constant(&self, min_hits: f64) -> Option<f64> {
        let from = 0f64.max(1.0 - self.ell.ln());
        self.grid
            .iter()
            .zip(&self.survival)
            .filter(|&(&y, &s)| y >= from && s * self.n_replicas as f64 >= min_hits)
            .map(|(&y, &s)| s / curve_envelope_shape(self.ell, y))
            .reduce(f64::max)
    }

    /// Interpolated survival: log-linear between positive grid values, linear
    /// otherwise; 1 below the grid; above it the smaller of the last value and
    /// the fitted envelope.
    pub fn survival_at(&self, y: f64) -> f64 {
        self.interp(y).0
    }

    fn interp(&self, y: f64) -> (f64, f64) {
        let g = &self.grid;
        if y < g[0] {
            return (1.0, 0.0);
        }
        let last = g.len() - 1;
        if y >= g[last] {
            if y == g[last] {
                return (self.survival[last], self.stderr[last]);
            }
            let env = self
                .envelope_constant(ENVELOPE_MIN_HITS)
                .map_or(0.0, |k| k * curve_envelope_shape(self.ell, y));
            return (self.survival[last].min(env), 0.0);
        }
        let j = g.partition_point(|&v| v <= y);
        let i = j - 1;
        let w = (y - g[i]) / (g[j] - g[i]);
        let (s0, s1) = (self.survival[i], self.survival[j]);
        let s = if s0 > 0.0 && s1 > 0.0 { (s0.ln() + w * (s1.ln() - s0.ln())).exp() } else { s0 + w * (s1 - s0) };
        (s, self.stderr[i] + w * (self.stderr[j] - self.stderr[i]))
    }

    /// Checks that the grid covers `[lo, hi]`.
    pub fn require_cover(&self, lo: f64, hi: f64) -> Result<()> {
        if self.grid[0] > lo + 1e-12 || self.y_max() < hi - 1e-12 {
            return Err(Error::Coverage(format!(
                "grid [{}, {}] must contain [{lo:.4}, {hi:.4}]",
                self.grid[0],
                self.y_max()
            )));
        }
        Ok(())
    }
}

/// Minimum exceedance count for a grid point to enter the envelope fit.
pub const ENVELOPE_MIN_HITS: f64 = 25.0;

/// Simulates `M_ell` over `replicas` and tabulates its survival on `grid`.
pub fn tail_curve(ell: f64, replicas: &Replicas, grid: &GridSpec, sim: &SimConfig) -> Result<TailCurve> {
    if !(ell >= 2.0) {
        return Err(Error::domain(format!("tail curve needs ell >= 2, got {ell}")));
    }
    if replicas.count == 0 {
        return Err(Error::domain("tail curve needs n >= 1"));
    }
    let shift = SQRT_2 * ell;
    let samples = sample_maxima(ell, replicas, sim)?.into_iter().map(|m| m - shift).collect();
    TailCurve::from_samples(ell, grid.points(), samples, Some(replicas.seed))
}

/// A linear functional `sum_k w_k S(y_k)` of a tail curve, evaluated at
/// nodes carrying interpolated survival values and errors.
struct Functional<'a> {
    curve: &'a TailCurve,
    survival: Vec<f64>,
    stderr: Vec<f64>,
}

impl<'a> Functional<'a> {
    fn new(curve: &'a TailCurve, nodes: Vec<f64>) -> Self {
        let (survival, stderr) = nodes.iter().map(|&z| curve.interp(z)).unzip();
        Functional { curve, survival, stderr }
    }

    fn estimate(&self, w: &[f64], mode: StderrMode, method: Method) -> Estimate {
        let value: f64 = w.iter().zip(&self.survival).map(|(w, s)| w * s).sum();
        let n = self.curve.n_replicas;
        let se = match mode {
            StderrMode::Independent => w.iter().zip(&self.stderr).map(|(w, e)| (w * e).powi(2)).sum::<f64>().sqrt(),
            StderrMode::Absolute => w.iter().zip(&self.stderr).map(|(w, e)| (w * e).abs()).sum(),
            StderrMode::SharedReplicas => {
                // nodes ascend, so S at the larger of two nodes is the later one
                let mut prefix = 0.0;
                let mut second = 0.0;
                for (wk, sk) in w.iter().zip(&self.survival) {
                    second += sk * wk * (wk + 2.0 * prefix);
                    prefix += wk;
                }
                ((second - value * value) / n as f64).max(0.0).sqrt()
            }
        };
        let mut e = Estimate::new(value, se, n, method);
        e.seed = self.curve.seed;
        e
    }
}

/// Trapezoid weights restricted to nodes in `[lo, hi]`; both ends must be nodes.
fn region_weights(nodes: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let idx: Vec<usize> = (0..nodes.len()).filter(|&k| nodes[k] >= lo && nodes[k] <= hi).collect();
    let local = trapezoid_weights(&idx.iter().map(|&k| nodes[k]).collect::<Vec<_>>());
    let mut w = vec![0.0; nodes.len()];
    for (k, wk) in idx.into_iter().zip(local) {
        w[k] = wk;
    }
    w
}

fn sorted_nodes(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LambdaOptions {
    pub stderr_mode: StderrMode,
}

/// `E[Lambda_{t,A}]` split over the window `A = [a(l), b(l)]` and its
/// complement in `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaExpectation {
    pub window: Estimate,
    pub complement: Estimate,
    pub total: Estimate,
    /// Part of `complement` beyond the curve grid, from the envelope clamp.
    pub beyond_grid: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub warnings: Vec<String>,
}

/// Integrand weight of the first-moment decomposition at ancestor gap `y`:
/// Girsanov factor `e^{-sqrt2 (g~(t-l) - y)}` times the ballot density of
/// the tilted straight barrier at endpoint `g~(t-l) - y`.
pub fn gap_kernel(query: &DeviationQuery, y: f64) -> Result<f64> {
    let p = query.tilted_ballot()?;
    let w = p.x2 - y;
    Ok((-SQRT_2 * w + analytic::log_ballot_density(&p, w)).exp())
}

/// Deterministic quadrature of
/// `int_A e^{-sqrt2 (g~ - y)} P(B below g~, B_{t-l} in g~ - dy) P(M_l > (m_t/t) l + y)`.
///
/// The survival argument is read off the `sqrt2 l`-centered curve at
/// `y - shift`, `shift = 3/(2 sqrt2) (log t / t) l`.
pub fn lambda_expectation(query: &DeviationQuery, curve: &TailCurve, opts: &LambdaOptions) -> Result<LambdaExpectation> {
    if (curve.ell - query.ell).abs() > 1e-9 * query.ell {
        return Err(Error::EllMismatch { curve: curve.ell, query: query.ell });
    }
    let params = query.tilted_ballot().map_err(|_| {
        Error::domain("tilted barrier ends at or below zero at t - ell; the decomposition needs g~(t - ell) > 0")
    })?;
    let shift = query.survival_shift();
    let (a, b) = (query.window_lo(), query.window_hi());
    curve.require_cover(-shift, b - shift)?;

    let y_end = curve.y_max() + shift;
    let mut ys: Vec<f64> = curve.grid.iter().map(|&z| z + shift).filter(|&y| y > 0.0).collect();
    ys.extend([0.0, a, b]);
    let ys = sorted_nodes(ys);
    let kernel: Vec<f64> = ys
        .iter()
        .map(|&y| (-SQRT_2 * (params.x2 - y) + analytic::log_ballot_density(&params, params.x2 - y)).exp())
        .collect();
    let zs: Vec<f64> = ys.iter().map(|&y| y - shift).collect();
    let f = Functional::new(curve, zs);

    let weigh = |lo: f64, hi: f64| -> Vec<f64> {
        region_weights(&ys, lo, hi).into_iter().zip(&kernel).map(|(w, k)| w * k).collect()
    };
    let w_window = weigh(a, b);
    let w_low = weigh(0.0, a);
    let w_high = weigh(b, y_end);
    let w_comp: Vec<f64> = w_low.iter().zip(&w_high).map(|(l, h)| l + h).collect();
    let w_total: Vec<f64> = w_window.iter().zip(&w_comp).map(|(x, c)| x + c).collect();

    // beyond the grid: envelope-clamped survival, deterministic
    let reach = y_end + 12.0 * query.ell.sqrt() + 10.0;
    let beyond = adaptive_simpson(
        |y| gap_kernel(query, y).unwrap_or(0.0) * curve.survival_at(y - shift),
        y_end,
        reach,
        1e-14,
    );

    let mode = opts.stderr_mode;
    let window = f.estimate(&w_window, mode, Method::Hybrid);
    let mut complement = f.estimate(&w_comp, mode, Method::Hybrid);
    complement.value += beyond;
    let mut total = f.estimate(&w_total, mode, Method::Hybrid);
    total.value += beyond;
    Ok(LambdaExpectation {
        window,
        complement,
        total,
        beyond_grid: beyond,
        window_lo: a,
        window_hi: b,
        warnings: query.regime_warnings(),
    })
}

/// Hybrid estimate of `P(M_t > m_t + x)`: the full first moment
/// `E[Lambda_t]` (window plus complement). Only an asymptotic proxy, exact
/// as `t -> inf` with `l` growing slowly.
pub fn deviation_probability(query: &DeviationQuery, curve: &TailCurve, opts: &LambdaOptions) -> Result<Estimate> {
    Ok(lambda_expectation(query, curve, opts)?.total)
}

/// Estimate of `sqrt(2/pi) int_0^inf y e^{sqrt2 y} P(M_l > sqrt2 l + y) dy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CstarEstimate {
    pub ell: f64,
    pub estimate: Estimate,
    /// Envelope bound on the integral beyond `reach`.
    pub truncation_bound: f64,
    pub envelope_k: Option<f64>,
    pub y_max: f64,
    pub reach: f64,
}

/// Trapezoid quadrature of the limiting-constant integrand over `[0, y_max]`.
/// Fails unless the envelope bound on the tail above the curve's reach is
/// below 1% of the partial integral.
pub fn cstar_estimate(curve: &TailCurve, mode: StderrMode) -> Result<CstarEstimate> {
    if curve.y_max() <= 0.0 {
        return Err(Error::Coverage("C* needs a grid reaching above y = 0".into()));
    }
    curve.require_cover(0.0, 0.0)?;
    let mut ys: Vec<f64> = curve.grid.iter().copied().filter(|&y| y > 0.0).collect();
    ys.push(0.0);
    let ys = sorted_nodes(ys);
    let c = (2.0 / PI).sqrt();
    let w: Vec<f64> = trapezoid_weights(&ys)
        .into_iter()
        .zip(&ys)
        .map(|(w, &y)| w * c * y * (SQRT_2 * y).exp())
        .collect();
    let f = Functional::new(curve, ys);
    let estimate = f.estimate(&w, mode, Method::Cstar);
    let k = curve.envelope_constant(ENVELOPE_MIN_HITS);
    let reach = curve.reach().min(curve.y_max());
    let truncation_bound = k.map_or(0.0, |k| c * k * analytic::curve_envelope_weighted_tail(curve.ell, reach));
    if truncation_bound > 0.01 * estimate.value.abs() {
        let ratio = if estimate.value == 0.0 { f64::INFINITY } else { 100.0 * truncation_bound / estimate.value.abs() };
        return Err(Error::InsufficientReach { bound: truncation_bound, ratio });
    }
    Ok(CstarEstimate { ell: curve.ell, estimate, truncation_bound, envelope_k: k, y_max: curve.y_max(), reach })
}
