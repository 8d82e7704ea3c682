//! Closed-form quantities: centering, deviation function, straight barriers,
//! ballot densities and bounds, Girsanov weight, tail envelopes.
//!
//! Everything here is a pure function of its inputs. Exponents are combined
//! in log space before exponentiation, so `gamma` stays finite (possibly
//! subnormal or zero) deep into the tail instead of producing `0 * inf`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::{Error, Result};

/// Coefficient `3 / (2 sqrt 2)` of the logarithmic correction.
pub const LOG_COEF: f64 = 3.0 / (2.0 * SQRT_2);

/// Lemma-level upper constant: `1 - e^{-u} <= u`.
pub const BALLOT_UPPER_CONST: f64 = 2.0 / 2.506_628_274_631_000_7;

/// Lemma-level lower constant: `1 - e^{-u} >= u (1 - e^{-2}) / 2` on `[0, 2]`.
pub fn ballot_lower_const() -> f64 {
    (1.0 - (-2.0f64).exp()) / (2.0 * PI).sqrt()
}

/// `log(1 - e^{-u})` for `u > 0`, accurate at both ends.
pub fn ln_1m_exp(u: f64) -> f64 {
    if u > std::f64::consts::LN_2 {
        (-(-u).exp()).ln_1p()
    } else {
        (-(-u).exp_m1()).ln()
    }
}

/// Centering `m_t = sqrt(2) t - 3/(2 sqrt 2) (log t)_+`, with `m_0 = 0`.
pub fn centering(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("centering needs t >= 0, got {t}")));
    }
    if t <= 1.0 {
        return Ok(SQRT_2 * t);
    }
    Ok(SQRT_2 * t - LOG_COEF * t.ln())
}

fn check_gamma_domain(t: f64, x: f64) -> Result<()> {
    if !(t >= 2.0) || !t.is_finite() {
        return Err(Error::domain(format!("gamma needs t >= 2, got t = {t}")));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("gamma needs x > 0, got x = {x}")));
    }
    Ok(())
}

/// `log gamma_t(x)`.
pub fn log_gamma(t: f64, x: f64) -> Result<f64> {
    check_gamma_domain(t, x)?;
    Ok(x.ln() - SQRT_2 * x - x * x / (2.0 * t) + LOG_COEF * x * t.ln() / t)
}

/// Deviation function `gamma_t(x) = x exp(-sqrt2 x - x^2/2t + 3/(2 sqrt2) x log t / t)`.
pub fn gamma(t: f64, x: f64) -> Result<f64> {
    log_gamma(t, x).map(f64::exp)
}

/// A straight line `s -> slope * s + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        if !slope.is_finite() || !intercept.is_finite() {
            return Err(Error::domain("line coefficients must be finite"));
        }
        Ok(Line { slope, intercept })
    }

    /// Line through `(0, start)` and `(horizon, end)`.
    pub fn through(start: f64, end: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::domain("line horizon must be > 0"));
        }
        Line::new((end - start) / horizon, start)
    }

    #[inline]
    pub fn at(&self, s: f64) -> f64 {
        self.slope * s + self.intercept
    }
}

/// Default window exponents: `a(l) = l^0.25`, `b(l) = l^0.75`.
pub const DEFAULT_WINDOW_A: f64 = 0.25;
pub const DEFAULT_WINDOW_B: f64 = 0.75;

/// A moderate-deviation question `P(M_t > m_t + x)` with split time `ell`
/// and ancestor-gap window `[ell^window_a, ell^window_b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationQuery {
    pub t: f64,
    pub x: f64,
    pub ell: f64,
    pub window_a: f64,
    pub window_b: f64,
}

impl DeviationQuery {
    pub fn new(t: f64, x: f64, ell: f64) -> Result<Self> {
        Self::with_window(t, x, ell, DEFAULT_WINDOW_A, DEFAULT_WINDOW_B)
    }

    pub fn with_window(t: f64, x: f64, ell: f64, window_a: f64, window_b: f64) -> Result<Self> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::domain(format!("deviation x must be > 0, got {x}")));
        }
        Self::for_diagnostics(t, x, ell, window_a, window_b)
    }

    /// Like [`with_window`](Self::with_window) but accepts any finite `x`,
    /// including negative deviations where the conditioning is vacuous.
    pub fn for_diagnostics(t: f64, x: f64, ell: f64, window_a: f64, window_b: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::domain("deviation x must be finite"));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("horizon t must be > 0, got {t}")));
        }
        if !(ell > 0.0 && ell < t) {
            return Err(Error::domain(format!("split time needs 0 < ell < t, got ell = {ell}, t = {t}")));
        }
        if !(window_a > 0.0 && window_a < 0.5 && window_b > 0.5) {
            return Err(Error::domain(format!(
                "window exponents need 0 < a < 1/2 < b, got a = {window_a}, b = {window_b}"
            )));
        }
        Ok(DeviationQuery { t, x, ell, window_a, window_b })
    }

    /// `a(ell)`.
    pub fn window_lo(&self) -> f64 {
        self.ell.powf(self.window_a)
    }

    /// `b(ell)`.
    pub fn window_hi(&self) -> f64 {
        self.ell.powf(self.window_b)
    }

    /// Time `t - ell` at which ancestors are taken.
    pub fn split_time(&self) -> f64 {
        self.t - self.ell
    }

    pub fn level(&self) -> f64 {
        centering(self.t).expect("validated horizon") + self.x
    }

    /// `g_t(s) = (m_t / t) s + x`.
    pub fn barrier(&self) -> Line {
        let m = centering(self.t).expect("validated horizon");
        Line { slope: m / self.t, intercept: self.x }
    }

    /// `g~_t(s) = g_t(s) - sqrt2 s = x - 3/(2 sqrt2) (log t / t) s`.
    pub fn tilted_barrier(&self) -> Line {
        let g = self.barrier();
        Line { slope: g.slope - SQRT_2, intercept: g.intercept }
    }

    /// Shift between the `(m_t/t) ell`-centered and the `sqrt2 ell`-centered
    /// survival arguments: `P(M_l > (m_t/t) l + y) = P(M_l > sqrt2 l + y - shift)`.
    pub fn survival_shift(&self) -> f64 {
        (SQRT_2 - self.barrier().slope) * self.ell
    }

    /// Ballot parameters of the tilted straight barrier over `[0, t - ell]`.
    pub fn tilted_ballot(&self) -> Result<BallotParams> {
        let g = self.tilted_barrier();
        BallotParams::new(self.x, g.at(self.split_time()), self.split_time())
    }

    /// Human-readable warnings when the split time leaves the regime where
    /// the hybrid decomposition is expected to be accurate.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.t > 1.0 && 2.0 * self.ell * self.t.ln() > self.t {
            w.push(format!(
                "ell = {} is not small against t / log t = {:.3}",
                self.ell,
                self.t / self.t.ln()
            ));
        }
        if self.ell * self.x * self.x > self.t * self.t / 4.0 {
            w.push(format!(
                "ell = {} is not small against t^2 / x^2 = {:.3}",
                self.ell,
                self.t * self.t / (self.x * self.x)
            ));
        }
        if self.window_hi() > self.t.sqrt().min(self.t / self.x.abs().max(1e-300)) {
            w.push(format!("window upper end b(ell) = {:.3} is not small against min(sqrt t, t/x)", self.window_hi()));
        }
        w
    }
}

/// Start offset, end offset and length of a straight-barrier bridge problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallotParams {
    pub x1: f64,
    pub x2: f64,
    pub horizon: f64,
}

impl BallotParams {
    pub fn new(x1: f64, x2: f64, horizon: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite() || v == f64::INFINITY;
        if !(ok(x1) && x2 > 0.0 && x2.is_finite() && horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!(
                "ballot parameters must be positive, got x1 = {x1}, x2 = {x2}, horizon = {horizon}"
            )));
        }
        Ok(BallotParams { x1, x2, horizon })
    }

    pub fn line(&self) -> Line {
        Line { slope: (self.x2 - self.x1) / self.horizon, intercept: self.x1 }
    }
}

fn log_gauss(y: f64, var: f64) -> f64 {
    -y * y / (2.0 * var) - 0.5 * (2.0 * PI * var).ln()
}

/// `log` of [`ballot_density`]; `-inf` where the density vanishes.
pub fn log_ballot_density(p: &BallotParams, y: f64) -> f64 {
    if !(y < p.x2) {
        return f64::NEG_INFINITY;
    }
    let u = 2.0 * p.x1 * (p.x2 - y) / p.horizon;
    let barrier = if u.is_infinite() { 0.0 } else { ln_1m_exp(u) };
    barrier + log_gauss(y, p.horizon)
}

/// Density of `B_t` at `y` on the event that `B` stays below the line from
/// `(0, x1)` to `(t, x2)`: `(1 - e^{-2 x1 (x2 - y)/t}) e^{-y^2/2t} / sqrt(2 pi t)`
/// for `y < x2`, and zero otherwise.
pub fn ballot_density(p: &BallotParams, y: f64) -> f64 {
    log_ballot_density(p, y).exp()
}

/// Total mass of [`ballot_density`]: the probability that Brownian motion
/// stays below the line up to the horizon,
/// `Phi(x2/sqrt t) - e^{2 x1 (x1 - x2)/t} Phi((x2 - 2 x1)/sqrt t)`.
pub fn stay_below_prob(p: &BallotParams) -> f64 {
    use crate::stats::normal_cdf;
    let s = p.horizon.sqrt();
    if p.x1.is_infinite() {
        return normal_cdf(p.x2 / s);
    }
    let z2 = (p.x2 - 2.0 * p.x1) / s;
    // e^{2x1(x1-x2)/t} Phi(z2) via log to survive large x1
    let log_reflect = 2.0 * p.x1 * (p.x1 - p.x2) / p.horizon + normal_cdf(z2).ln();
    normal_cdf(p.x2 / s) - log_reflect.exp()
}

fn linear_bound_shape(p: &BallotParams, y: f64) -> f64 {
    p.x1 * (p.x2 - y) * p.horizon.powf(-1.5) * (-y * y / (2.0 * p.horizon)).exp()
}

/// `C_up x1 (x2 - y) t^{-3/2} e^{-y^2/2t}` with `C_up = 2 / sqrt(2 pi)`.
pub fn ballot_upper_bound(p: &BallotParams, y: f64) -> Result<f64> {
    if !(y < p.x2) {
        return Err(Error::domain(format!("ballot bounds need y < x2, got y = {y}, x2 = {}", p.x2)));
    }
    Ok(BALLOT_UPPER_CONST * linear_bound_shape(p, y))
}

/// `C_low x1 (x2 - y) t^{-3/2} e^{-y^2/2t}` with `C_low = (1 - e^{-2}) / sqrt(2 pi)`,
/// valid on `x1 (x2 - y) <= t`.
pub fn ballot_lower_bound(p: &BallotParams, y: f64) -> Result<f64> {
    if !(y < p.x2) {
        return Err(Error::domain(format!("ballot bounds need y < x2, got y = {y}, x2 = {}", p.x2)));
    }
    if p.x1 * (p.x2 - y) > p.horizon {
        return Err(Error::domain(format!(
            "lower ballot bound needs x1 (x2 - y) <= t, got {} > {}",
            p.x1 * (p.x2 - y),
            p.horizon
        )));
    }
    Ok(ballot_lower_const() * linear_bound_shape(p, y))
}

/// Likelihood ratio `e^{-sqrt2 w - k}` turning drift-`sqrt2` path
/// expectations at endpoint `w` into driftless ones over `[0, k]`.
pub fn girsanov_weight(endpoint: f64, horizon: f64) -> f64 {
    debug_assert!(horizon >= 0.0);
    (-SQRT_2 * endpoint - horizon).exp()
}

/// `K_env (1 + x_+) e^{-sqrt2 x}`: a truncation gate for integrals against
/// `P(M_t > m_t + x)`, never a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEnvelope {
    pub k_env: f64,
}

impl Default for TailEnvelope {
    fn default() -> Self {
        TailEnvelope { k_env: 10.0 }
    }
}

impl TailEnvelope {
    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        if !(t >= 2.0) {
            return Err(Error::domain(format!("tail envelope needs t >= 2, got {t}")));
        }
        Ok(self.k_env * (1.0 + x.max(0.0)) * (-SQRT_2 * x).exp())
    }
}

/// Shape `(y + log l) l^{-3/2} e^{-sqrt2 y - y^2/2l}` bounding
/// `P(M_l > sqrt2 l + y)` up to a constant, for `y >= 1 - log l`.
pub fn curve_envelope_shape(ell: f64, y: f64) -> f64 {
    let y = y.max(1.0 - ell.ln());
    (y + ell.ln()) * ell.powf(-1.5) * (-SQRT_2 * y - y * y / (2.0 * ell)).exp()
}

/// `int_Y^inf y e^{sqrt2 y} curve_envelope_shape(l, y) dy`
/// `= l^{-3/2} int_Y^inf y (y + log l) e^{-y^2/2l} dy` in closed form, `Y >= 0`.
pub fn curve_envelope_weighted_tail(ell: f64, from: f64) -> f64 {
    let y = from.max(0.0);
    let g = (-y * y / (2.0 * ell)).exp();
    let second = ell * y * g + ell.powf(1.5) * (2.0 * PI).sqrt() * crate::stats::normal_sf(y / ell.sqrt());
    let first = ell * g;
    ell.powf(-1.5) * (second + ell.ln() * first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn centering_examples() {
        assert_relative_eq!(centering(1.0).unwrap(), SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(centering(0.5).unwrap(), SQRT_2 / 2.0, epsilon = 1e-15);
        // mpmath, 40 digits
        let e2 = std::f64::consts::E.powi(2);
        assert_relative_eq!(centering(e2).unwrap(), 8.328383004683716921, epsilon = 1e-12);
        assert_eq!(centering(0.0).unwrap(), 0.0);
        assert!(centering(-1.0).is_err());
    }

    #[test]
    fn centering_is_continuous_at_one() {
        let below = centering(1.0 - 1e-9).unwrap();
        let above = centering(1.0 + 1e-9).unwrap();
        assert!((below - above).abs() < 1e-8);
        // slope sqrt2 on [0, 1]
        assert_relative_eq!(centering(0.75).unwrap() - centering(0.25).unwrap(), SQRT_2 / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gamma_examples() {
        // mpmath, 40 digits
        assert_relative_eq!(gamma(2.0, 1.0).unwrap(), 0.27345539539043622223, max_relative = 1e-13);
        assert_relative_eq!(gamma(100.0, 10.0).unwrap(), 7.130719117123101833e-6, max_relative = 1e-12);
        assert_relative_eq!(gamma(12.0, 4.0).unwrap(), 0.017271813499173681378, max_relative = 1e-12);
        assert!(gamma(1.5, 1.0).is_err());
        assert!(gamma(3.0, 0.0).is_err());
    }

    #[test]
    fn gamma_stays_representable_far_out() {
        let lg = log_gamma(1e6, 600.0).unwrap();
        assert!(lg < -800.0 && lg.is_finite());
        assert_eq!(gamma(1e6, 600.0).unwrap(), 0.0);
    }

    #[test]
    fn barrier_examples() {
        let q = DeviationQuery::new(10.0, 2.5, 3.0).unwrap();
        let g = q.barrier();
        assert_eq!(g.at(0.0), 2.5);
        assert_relative_eq!(g.at(10.0), centering(10.0).unwrap() + 2.5, epsilon = 1e-12);
        let e = std::f64::consts::E;
        let q = DeviationQuery::new(e, 2.0, 1.0).unwrap();
        assert_relative_eq!(q.tilted_barrier().slope, -0.39019507126716667227, epsilon = 1e-14);
        assert_eq!(q.tilted_barrier().intercept, 2.0);
    }

    #[test]
    fn query_validation() {
        assert!(DeviationQuery::new(10.0, 0.0, 3.0).is_err());
        assert!(DeviationQuery::new(10.0, 1.0, 10.0).is_err());
        assert!(DeviationQuery::with_window(10.0, 1.0, 3.0, 0.6, 0.75).is_err());
        assert!(DeviationQuery::with_window(10.0, 1.0, 3.0, 0.25, 0.5).is_err());
        assert!(DeviationQuery::for_diagnostics(10.0, -5.0, 3.0, 0.25, 0.75).is_ok());
    }

    #[test]
    fn regime_warnings_fire_for_wide_split() {
        assert!(!DeviationQuery::new(12.0, 4.0, 5.0).unwrap().regime_warnings().is_empty());
        assert!(DeviationQuery::new(1e6, 30.0, 9.0).unwrap().regime_warnings().is_empty());
    }

    #[test]
    fn ballot_density_examples() {
        let p = BallotParams::new(1.0, 1.0, 1.0).unwrap();
        // (1 - e^{-2}) / sqrt(2 pi), mpmath
        assert_relative_eq!(ballot_density(&p, 0.0), 0.34495131388824462599, epsilon = 1e-15);
        assert_eq!(ballot_density(&p, 1.0), 0.0);
        assert_eq!(ballot_density(&p, 3.0), 0.0);
        let far = BallotParams::new(1e9, 1.0, 2.0).unwrap();
        assert_relative_eq!(ballot_density(&far, 0.3), (-0.09f64 / 4.0).exp() / (4.0 * PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn stay_below_closed_form_matches_density_mass() {
        for &(x1, x2, t) in &[(1.0, 1.0, 1.0), (0.5, 2.0, 1.0), (2.0, 0.5, 2.0), (0.5, 0.5, 0.5)] {
            let p = BallotParams::new(x1, x2, t).unwrap();
            let mass = crate::quad::panels(|y| ballot_density(&p, y), x2 - 40.0 * t.sqrt(), x2, 64, 1e-13);
            assert_relative_eq!(stay_below_prob(&p), mass, epsilon = 1e-10);
        }
        // Phi(1) - Phi(-1), mpmath
        let p = BallotParams::new(1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(stay_below_prob(&p), 0.68268949213708589717, epsilon = 1e-14);
    }

    #[test]
    fn ballot_sandwich_at_reference_point() {
        let p = BallotParams::new(1.0, 1.0, 1.0).unwrap();
        let exact = ballot_density(&p, 0.0);
        let lo = ballot_lower_bound(&p, 0.0).unwrap();
        let hi = ballot_upper_bound(&p, 0.0).unwrap();
        assert!(lo <= exact * (1.0 + 1e-12) && exact <= hi, "{lo} {exact} {hi}");
    }

    #[test]
    fn ballot_bounds_vanish_linearly_at_the_end_barrier() {
        let p = BallotParams::new(1.5, 2.0, 3.0).unwrap();
        let a = ballot_upper_bound(&p, 2.0 - 1e-3).unwrap();
        let b = ballot_upper_bound(&p, 2.0 - 2e-3).unwrap();
        assert_relative_eq!(b / a, 2.0, max_relative = 1e-2);
        assert!(ballot_upper_bound(&p, 2.0).is_err());
        let c = ballot_lower_bound(&p, 2.0 - 1e-3).unwrap();
        assert!(c < 1e-3);
    }

    #[test]
    fn lower_bound_is_tight_at_u_equals_two() {
        // x1 (x2 - y) = t, i.e. u = 2: exact / linearization = (1 - e^{-2}) / 2
        let p = BallotParams::new(1.0, 2.0, 2.0).unwrap();
        let exact = ballot_density(&p, 0.0);
        let lo = ballot_lower_bound(&p, 0.0).unwrap();
        assert_relative_eq!(exact, lo, max_relative = 1e-14);
        assert!(ballot_lower_bound(&p, -0.1).is_err());
    }

    #[test]
    fn girsanov_weight_examples() {
        assert_eq!(girsanov_weight(0.0, 0.0), 1.0);
        let k = 1.7;
        assert_relative_eq!(girsanov_weight(-k * SQRT_2, k), k.exp(), max_relative = 1e-14);
    }

    #[test]
    fn tail_envelope_examples() {
        let env = TailEnvelope::default();
        assert_eq!(env.value(5.0, 0.0).unwrap(), 10.0);
        assert_relative_eq!(env.value(5.0, -1.0).unwrap(), 10.0 * SQRT_2.exp(), epsilon = 1e-12);
        assert!(env.value(1.0, 0.0).is_err());
    }

    #[test]
    fn envelope_weighted_tail_matches_quadrature() {
        for &(ell, from) in &[(8.0, 0.0), (8.0, 5.0), (12.0, 3.0)] {
            let num = crate::quad::panels(
                |y| y * (SQRT_2 * y).exp() * curve_envelope_shape(ell, y),
                from,
                from + 40.0 * f64::sqrt(ell),
                64,
                1e-12,
            );
            assert_relative_eq!(curve_envelope_weighted_tail(ell, from), num, max_relative = 1e-8);
        }
    }

    #[test]
    fn line_through_points() {
        let l = Line::through(1.0, 3.0, 4.0).unwrap();
        assert_eq!(l.at(0.0), 1.0);
        assert_eq!(l.at(4.0), 3.0);
        assert!(Line::new(f64::NAN, 0.0).is_err());
    }
}
