//! Brute-force Brownian bridge oracles.
//!
//! Paths are realized on a knot grid; between consecutive knots the
//! probability of touching a straight barrier is known exactly, so the
//! estimators here carry no discretization bias for piecewise-linear
//! barriers whose breakpoints are knots.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analytic::BallotParams;
use crate::rng::{Replicas, Stream};
use crate::stats::{Method, Moments};
use crate::{Error, Estimate, Result};

/// Probability that a Brownian bridge over `span` crosses a straight barrier,
/// given clearances `d1`, `d2` below it at the two ends: `e^{-2 d1 d2 / span}`
/// when both are positive, one otherwise.
#[inline]
pub fn exact_segment_crossing_prob(d1: f64, d2: f64, span: f64) -> f64 {
    if d1 <= 0.0 || d2 <= 0.0 {
        return 1.0;
    }
    if span <= 0.0 {
        return 0.0;
    }
    (-2.0 * d1 * d2 / span).exp()
}

/// Position at time `s` of a Brownian bridge from `(t0, x0)` to `(t1, x1)`.
#[inline]
pub fn bridge_point<R: Rng + ?Sized>(t0: f64, x0: f64, t1: f64, x1: f64, s: f64, rng: &mut R) -> f64 {
    debug_assert!(t0 <= s && s <= t1);
    let span = t1 - t0;
    if span <= 0.0 {
        return x0;
    }
    let w = (s - t0) / span;
    let mean = x0 + w * (x1 - x0);
    let var = (s - t0) * (t1 - s) / span;
    let z: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * z
}

/// A Brownian bridge pinned at both ends, realized on `n_steps` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub horizon: f64,
    pub start: f64,
    pub end: f64,
    pub n_steps: usize,
}

impl BridgeSpec {
    pub fn new(horizon: f64, start: f64, end: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || n_steps < 2 {
            return Err(Error::domain(format!(
                "bridge needs horizon > 0 and n_steps >= 2, got {horizon}, {n_steps}"
            )));
        }
        Ok(BridgeSpec { horizon, start, end, n_steps })
    }

    /// Knot values at `k * horizon / n_steps`, `k = 0..=n_steps`, sampled
    /// sequentially from the bridge transition law.
    pub fn sample_knots<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let dt = self.horizon / self.n_steps as f64;
        let mut out = Vec::with_capacity(self.n_steps + 1);
        let mut x = self.start;
        out.push(x);
        for k in 1..self.n_steps {
            let s = (k - 1) as f64 * dt;
            x = bridge_point(s, x, self.horizon, self.end, s + dt, rng);
            out.push(x);
        }
        out.push(self.end);
        out
    }
}

/// Monte Carlo estimate of
/// `P(B_s <= line(s) for all s <= t, B_t in [bin.0, bin.1))` for the line
/// from `(0, x1)` to `(t, x2)`.
///
/// The free path is realized on `n_steps` knots and each replica contributes
/// the exact conditional probability of not crossing between knots, so the
/// estimator is unbiased for any `n_steps >= 1`.
pub fn stay_below_line_prob_mc(
    p: &BallotParams,
    bin: (f64, f64),
    n_steps: usize,
    replicas: &Replicas,
) -> Result<Estimate> {
    if !(bin.0 < bin.1) {
        return Err(Error::domain(format!("empty endpoint bin [{}, {})", bin.0, bin.1)));
    }
    if replicas.count == 0 || n_steps == 0 {
        return Err(Error::domain("stay-below oracle needs n >= 1 replicas and n_steps >= 1"));
    }
    let line = p.line();
    let dt = p.horizon / n_steps as f64;
    let sd = dt.sqrt();
    let m = replicas.fold(
        Moments::default,
        |i, acc| {
            let mut rng = replicas.rng(Stream::Oracle, i);
            let mut x = 0.0f64;
            let mut clearance = line.at(0.0);
            let mut weight = 1.0f64;
            for k in 1..=n_steps {
                let z: f64 = rng.sample(StandardNormal);
                x += sd * z;
                let next = line.at(k as f64 * dt) - x;
                weight *= 1.0 - exact_segment_crossing_prob(clearance, next, dt);
                clearance = next;
            }
            let inside = x >= bin.0 && x < bin.1;
            acc.push(if inside { weight } else { 0.0 });
            Ok(())
        },
        |t, b| t.merge(&b),
    )?;
    Ok(m.estimate(Method::Oracle).with_seed(replicas.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::stay_below_prob;
    use crate::rng::replica_rng;
    use approx::assert_relative_eq;

    #[test]
    fn segment_crossing_examples() {
        assert_eq!(exact_segment_crossing_prob(0.0, 1.0, 1.0), 1.0);
        assert_eq!(exact_segment_crossing_prob(1.0, -0.5, 1.0), 1.0);
        assert_relative_eq!(exact_segment_crossing_prob(1.0, 1.0, 2.0), (-1.0f64).exp(), epsilon = 1e-16);
        assert!(exact_segment_crossing_prob(1e3, 1e3, 1.0) < 1e-300);
    }

    #[test]
    fn segment_crossing_matches_fine_random_walk() {
        // Bridge from -1 to -1 over span 2 under a barrier at 0, checked on
        // knots only with the Broadie-Glasserman-Kou shift 0.5826 sqrt(dt).
        let n = 20_000u64;
        let steps = 2_000usize;
        let dt = 2.0 / steps as f64;
        let shifted = -0.5826 * dt.sqrt();
        let spec = BridgeSpec::new(2.0, -1.0, -1.0, steps).unwrap();
        let mut hits = 0u64;
        for i in 0..n {
            let knots = spec.sample_knots(&mut replica_rng(5, Stream::Oracle, i));
            hits += knots.iter().any(|&x| x > shifted) as u64;
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let exact = exact_segment_crossing_prob(1.0, 1.0, 2.0);
        assert!((p - exact).abs() < 4.0 * se, "{p} vs {exact}");
    }

    #[test]
    fn bridge_knots_pin_both_ends() {
        let spec = BridgeSpec::new(3.0, 0.5, -2.0, 10).unwrap();
        let k = spec.sample_knots(&mut replica_rng(1, Stream::Oracle, 0));
        assert_eq!(k.len(), 11);
        assert_eq!(k[0], 0.5);
        assert_eq!(k[10], -2.0);
        assert!(BridgeSpec::new(3.0, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn oracle_edge_cases() {
        let p = BallotParams::new(1.0, 1.0, 1.0).unwrap();
        let r = Replicas::new(3, 2_000);
        let above = stay_below_line_prob_mc(&p, (1.0, 5.0), 4, &r).unwrap();
        assert_eq!(above.value, 0.0);
        assert!(stay_below_line_prob_mc(&p, (1.0, 1.0), 4, &r).is_err());
        assert!(stay_below_line_prob_mc(&p, (0.0, 1.0), 4, &Replicas::new(1, 0)).is_err());
        // barrier that never binds: Gaussian endpoint mass of the bin
        let far = BallotParams::new(1e6, 1e6, 1.0).unwrap();
        let est = stay_below_line_prob_mc(&far, (-0.5, 0.5), 2, &Replicas::new(4, 40_000)).unwrap();
        let target = crate::stats::normal_cdf(0.5) - crate::stats::normal_cdf(-0.5);
        assert!(est.z_to(target).abs() < 4.0, "{est} vs {target}");
    }

    #[test]
    fn oracle_matches_closed_form_and_is_step_free() {
        let p = BallotParams::new(1.0, 1.0, 1.0).unwrap();
        let r = Replicas::new(9, 100_000);
        let coarse = stay_below_line_prob_mc(&p, (f64::NEG_INFINITY, 1.0), 2, &r).unwrap();
        let fine = stay_below_line_prob_mc(&p, (f64::NEG_INFINITY, 1.0), 64, &Replicas::new(10, 100_000)).unwrap();
        let exact = stay_below_prob(&p);
        assert!(coarse.z_to(exact).abs() < 3.5, "{coarse} vs {exact}");
        assert!(fine.z_to(exact).abs() < 3.5, "{fine} vs {exact}");
        assert!(coarse.z_against(&fine).abs() < 3.5);
    }
}
