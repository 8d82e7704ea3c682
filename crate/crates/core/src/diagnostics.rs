//! Structural checks on runs conditioned to deviate, and many-to-few
//! moment identities.
//!
//! Conditioned runs are found cheaply: every replica is first expanded by
//! the allocation-free max-only path, and only successful replicas are
//! regrown (from the same seed, hence identically) as full skeleton trees.
//! The ancestor multiplicity `Lambda` vanishes off the success event, so
//! moments of `Lambda` need nothing else.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::analytic::{centering, DeviationQuery};
use crate::quad::{adaptive_simpson, panels};
use crate::rng::{Replicas, Stream};
use crate::sim::{for_each_leaf, sample_max, SimConfig, SkeletonTree, Workspace};
use crate::stats::{binomial_estimate, normal_cdf, normal_sf, Method, Moments};
use crate::{Error, Estimate, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// No replica reached the deviation level.
    NoSuccesses,
}

/// Statistics of one deviation query over a replica set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedStats {
    pub query: DeviationQuery,
    pub status: Status,
    pub n_total: u64,
    pub n_success: u64,
    /// Successes in which some ancestor at `t - l` with a descendant above
    /// the level had crossed the barrier `g_t` before `t - l`.
    pub n_crossed: u64,
    /// `Lambda -> count` over successful runs.
    pub multiplicity: BTreeMap<u64, u64>,
    /// `(g_t(t - l) - X_{t-l}(u*)) / sqrt(l)` for the ancestor `u*` of the
    /// maximal particle, one per success.
    pub gap_samples: Vec<f64>,
    /// `sum Lambda^k`, `k = 1..=4`, over all runs (zero off success).
    pub lambda_power_sums: [f64; 4],
}

impl ConditionedStats {
    fn new(query: DeviationQuery) -> Self {
        ConditionedStats {
            query,
            status: Status::NoSuccesses,
            n_total: 0,
            n_success: 0,
            n_crossed: 0,
            multiplicity: BTreeMap::new(),
            gap_samples: Vec::new(),
            lambda_power_sums: [0.0; 4],
        }
    }

    fn merge(&mut self, other: ConditionedStats) {
        self.n_total += other.n_total;
        self.n_success += other.n_success;
        self.n_crossed += other.n_crossed;
        for (k, c) in other.multiplicity {
            *self.multiplicity.entry(k).or_insert(0) += c;
        }
        self.gap_samples.extend(other.gap_samples);
        for k in 0..4 {
            self.lambda_power_sums[k] += other.lambda_power_sums[k];
        }
        self.status = if self.n_success > 0 { Status::Ok } else { Status::NoSuccesses };
    }

    pub fn success_rate(&self) -> Estimate {
        binomial_estimate(self.n_success, self.n_total, Method::Diagnostic)
    }

    /// `P(G_t | success)`.
    pub fn crossing_rate(&self) -> Option<Estimate> {
        (self.n_success > 0).then(|| binomial_estimate(self.n_crossed, self.n_success, Method::Diagnostic))
    }

    /// `P(Lambda = k | success)`.
    pub fn multiplicity_rate(&self, k: u64) -> Option<Estimate> {
        let c = self.multiplicity.get(&k).copied().unwrap_or(0);
        (self.n_success > 0).then(|| binomial_estimate(c, self.n_success, Method::Diagnostic))
    }

    /// `P(Lambda >= k | success)`.
    pub fn multiplicity_tail(&self, k: u64) -> Option<Estimate> {
        let c = self.multiplicity.range(k..).map(|(_, c)| c).sum();
        (self.n_success > 0).then(|| binomial_estimate(c, self.n_success, Method::Diagnostic))
    }

    /// `P(Lambda = 1 | success) - P(Lambda >= 2 | success)` with its
    /// multinomial standard error.
    pub fn single_minus_multiple(&self) -> Option<Estimate> {
        let n = self.n_success;
        if n == 0 {
            return None;
        }
        let p1 = self.multiplicity_rate(1)?.value;
        let p2 = self.multiplicity_tail(2)?.value;
        let d = p1 - p2;
        let var = (p1 + p2 - d * d) / n as f64;
        Some(Estimate::new(d, var.max(0.0).sqrt(), n, Method::Diagnostic))
    }

    /// Fraction of normalized gaps inside `[a(l), b(l)] / sqrt(l)`.
    pub fn gap_window_fraction(&self) -> Option<Estimate> {
        if self.gap_samples.is_empty() {
            return None;
        }
        let s = self.query.ell.sqrt();
        let (lo, hi) = (self.query.window_lo() / s, self.query.window_hi() / s);
        let inside = self.gap_samples.iter().filter(|&&g| g >= lo && g <= hi).count() as u64;
        Some(binomial_estimate(inside, self.gap_samples.len() as u64, Method::Diagnostic))
    }

    /// `E[Lambda^2] / E[Lambda]` with a delta-method standard error; `None`
    /// when no run had `Lambda > 0`.
    pub fn second_moment_ratio(&self) -> Option<Estimate> {
        let n = self.n_total as f64;
        let [s1, s2, s3, s4] = self.lambda_power_sums;
        if s1 == 0.0 {
            return None;
        }
        let (b, a) = (s1 / n, s2 / n);
        let r = a / b;
        let var_a = s4 / n - a * a;
        let var_b = a - b * b;
        let cov = s3 / n - a * b;
        let var_r = (var_a - 2.0 * r * cov + r * r * var_b) / (n * b * b);
        Some(Estimate::new(r, var_r.max(0.0).sqrt(), self.n_total, Method::Diagnostic))
    }
}

/// Conditioned diagnostics for several queries sharing one horizon, over a
/// single replica set.
pub fn run_conditioned_diagnostics_many(
    queries: &[DeviationQuery],
    replicas: &Replicas,
    opts: &DiagnosticsOptions,
) -> Result<Vec<ConditionedStats>> {
    conditioned(queries, replicas, None, opts)
}

/// [`run_conditioned_diagnostics_many`] reusing the maxima of an earlier
/// [`sample_maxima`](crate::estimators::sample_maxima) call over the same
/// replica set; only successful replicas are simulated again.
pub fn run_conditioned_diagnostics_with_maxima(
    queries: &[DeviationQuery],
    replicas: &Replicas,
    maxima: &[f64],
    opts: &DiagnosticsOptions,
) -> Result<Vec<ConditionedStats>> {
    if maxima.len() as u64 != replicas.count {
        return Err(Error::domain(format!(
            "{} maxima for {} replicas",
            maxima.len(),
            replicas.count
        )));
    }
    conditioned(queries, replicas, Some(maxima), opts)
}

fn conditioned(
    queries: &[DeviationQuery],
    replicas: &Replicas,
    maxima: Option<&[f64]>,
    opts: &DiagnosticsOptions,
) -> Result<Vec<ConditionedStats>> {
    let Some(first) = queries.first() else {
        return Ok(Vec::new());
    };
    let t = first.t;
    if queries.iter().any(|q| q.t != t) {
        return Err(Error::domain("queries must share the horizon t"));
    }
    let m_t = centering(t)?;
    let levels: Vec<f64> = queries.iter().map(|q| m_t + q.x).collect();
    let lowest = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let mode = opts.sim.crossing_mode();

    let init = || (Workspace::default(), queries.iter().map(|&q| ConditionedStats::new(q)).collect::<Vec<_>>());
    let (_, stats) = replicas.fold(
        init,
        |i, (ws, stats)| {
            let max = match maxima {
                Some(m) => m[i as usize],
                None => sample_max(t, &opts.sim, &mut replicas.rng(Stream::Tree, i), ws)?.0,
            };
            for s in stats.iter_mut() {
                s.n_total += 1;
            }
            if max <= lowest {
                return Ok(());
            }
            let mut tree = SkeletonTree::simulate_in(t, &opts.sim, &mut replicas.rng(Stream::Tree, i), ws)?;
            if tree.max_displacement().to_bits() != max.to_bits() {
                return Err(Error::domain(format!("replica {i} does not reproduce the supplied maximum")));
            }
            let mut infill = replicas.rng(Stream::Infill, i);
            let top = tree.argmax_leaf();
            for ((q, &level), s) in queries.iter().zip(&levels).zip(stats.iter_mut()) {
                if max <= level {
                    continue;
                }
                let split = q.split_time();
                let g = q.barrier();
                let flags = tree.crossing_flags(&g, split, mode, &mut infill)?;
                let part = tree.ancestor_partition(split, &mut infill)?;
                let mut lambda = 0u64;
                let mut crossed = false;
                for a in part.ancestors.iter().filter(|a| a.descendant_max > level) {
                    if flags[a.node as usize] {
                        crossed = true;
                    } else {
                        lambda += 1;
                    }
                }
                let k = tree.leaves.binary_search(&top).expect("argmax is a leaf");
                let anc = &part.ancestors[part.leaf_ancestor[k] as usize];
                s.gap_samples.push((g.at(split) - anc.position) / q.ell.sqrt());
                s.n_success += 1;
                s.n_crossed += crossed as u64;
                *s.multiplicity.entry(lambda).or_insert(0) += 1;
                let l = lambda as f64;
                s.lambda_power_sums[0] += l;
                s.lambda_power_sums[1] += l * l;
                s.lambda_power_sums[2] += l * l * l;
                s.lambda_power_sums[3] += l * l * l * l;
                s.status = Status::Ok;
            }
            Ok(())
        },
        |(_, total), (_, block)| {
            for (t, b) in total.iter_mut().zip(block) {
                t.merge(b);
            }
        },
    )?;
    Ok(stats)
}

/// Diagnostics for one query: conditional barrier-crossing rate, ancestor
/// multiplicity and normalized ancestor gaps among runs with
/// `M_t > m_t + x`.
pub fn run_conditioned_diagnostics(
    query: &DeviationQuery,
    replicas: &Replicas,
    opts: &DiagnosticsOptions,
) -> Result<ConditionedStats> {
    Ok(run_conditioned_diagnostics_many(std::slice::from_ref(query), replicas, opts)?.remove(0))
}

/// `E[Lambda_t^2] / E[Lambda_t]`; `None` (empty result) if `Lambda` never
/// fired.
pub fn second_moment_ratio(query: &DeviationQuery, replicas: &Replicas, opts: &DiagnosticsOptions) -> Result<Option<Estimate>> {
    Ok(run_conditioned_diagnostics(query, replicas, opts)?
        .second_moment_ratio()
        .map(|e| e.with_seed(replicas.seed)))
}

/// Endpoint functional `F` for the many-to-few identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalSpec {
    /// `F = 1`.
    Constant,
    /// `F = 1{X_t > level}`.
    EndpointAbove { level: f64 },
    /// `F = 1{lo < X_t <= hi}`.
    EndpointInInterval { lo: f64, hi: f64 },
}

impl FunctionalSpec {
    fn interval(&self) -> (f64, f64) {
        match *self {
            FunctionalSpec::Constant => (f64::NEG_INFINITY, f64::INFINITY),
            FunctionalSpec::EndpointAbove { level } => (level, f64::INFINITY),
            FunctionalSpec::EndpointInInterval { lo, hi } => (lo, hi),
        }
    }

    #[inline]
    fn holds(&self, x: f64) -> bool {
        let (lo, hi) = self.interval();
        x > lo && x <= hi
    }

    /// `P(N(0, var) in set)`.
    fn gaussian_mass(&self, var: f64) -> f64 {
        let (lo, hi) = self.interval();
        let s = var.sqrt();
        normal_cdf(hi / s) - normal_cdf(lo / s)
    }
}

/// `P(Z1 in I, Z2 in I)` for centered Gaussians with variance `t` and
/// covariance `s`, by quadrature of the conditional law of `Z2` given `Z1`.
pub fn pair_mass(spec: &FunctionalSpec, t: f64, s: f64, tol: f64) -> f64 {
    let (lo, hi) = spec.interval();
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        return 1.0;
    }
    let sd = t.sqrt();
    let (a, b) = (lo.max(-12.0 * sd), hi.min(12.0 * sd));
    if a >= b {
        return 0.0;
    }
    let rho = s / t;
    let cond_sd = (t - s * s / t).max(0.0).sqrt();
    let inner = |z: f64| {
        let mean = rho * z;
        let p = if cond_sd == 0.0 {
            (mean > lo && mean <= hi) as u8 as f64
        } else {
            normal_cdf((hi - mean) / cond_sd) - normal_cdf((lo - mean) / cond_sd)
        };
        (-z * z / (2.0 * t)).exp() / (2.0 * PI * t).sqrt() * p
    };
    panels(inner, a, b, 48, tol)
}

/// One side-by-side comparison of a simulated first or second moment with
/// its many-to-few closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub t: f64,
    pub functional: FunctionalSpec,
    pub checks: Vec<IdentityCheck>,
}

impl MomentReport {
    pub fn max_abs_z(&self) -> f64 {
        self.checks.iter().map(|c| c.z.abs()).fold(0.0, f64::max)
    }
}

/// Right-hand side of the many-to-one identity: `e^t P(B_t in I)`.
pub fn many_to_one_rhs(t: f64, spec: &FunctionalSpec) -> f64 {
    t.exp() * spec.gaussian_mass(t)
}

/// Right-hand side of the many-to-two identity:
/// `2 int_0^t e^{2t - s} P(B^{1,s}_t in I, B^{2,s}_t in I) ds`.
pub fn many_to_two_rhs(t: f64, spec: &FunctionalSpec) -> f64 {
    if let FunctionalSpec::Constant = spec {
        return 2.0 * (2.0 * t).exp() - 2.0 * t.exp();
    }
    let scale = (2.0 * t).exp();
    2.0 * scale * adaptive_simpson(|s| (-s).exp() * pair_mass(spec, t, s, 1e-10), 0.0, t, 1e-9)
}

/// Simulated `E[sum_u F(X_t(u))]` and `E[sum_{u != v} F(X_t(u)) F(X_t(v))]`
/// against their closed forms, with z-scores.
pub fn moment_identity_checks(t: f64, spec: &FunctionalSpec, replicas: &Replicas, sim: &SimConfig) -> Result<MomentReport> {
    if !(t > 0.0) {
        return Err(Error::domain("moment checks need t > 0"));
    }
    if replicas.count < 2 {
        return Err(Error::domain("moment checks need at least 2 replicas"));
    }
    let (one, two) = replicas.fold(
        || (Workspace::default(), Moments::default(), Moments::default()),
        |i, (ws, one, two)| {
            let mut k = 0u64;
            for_each_leaf(t, sim, &mut replicas.rng(Stream::Tree, i), ws, |x| k += spec.holds(x) as u64)?;
            let k = k as f64;
            one.push(k);
            two.push(k * (k - 1.0));
            Ok(())
        },
        |(_, o, w), (_, bo, bw)| {
            o.merge(&bo);
            w.merge(&bw);
        },
    )
    .map(|(_, o, w)| (o, w))?;
    let check = |name: &str, m: Moments, rhs: f64| {
        let lhs = m.estimate(Method::Direct).with_seed(replicas.seed);
        let z = lhs.z_to(rhs);
        IdentityCheck { name: name.to_string(), lhs, rhs, z }
    };
    Ok(MomentReport {
        t,
        functional: *spec,
        checks: vec![
            check("many_to_one", one, many_to_one_rhs(t, spec)),
            check("many_to_two", two, many_to_two_rhs(t, spec)),
        ],
    })
}

/// `e^t P(B_t > a)`: the many-to-one value for a level functional.
pub fn expected_count_above(t: f64, a: f64) -> f64 {
    t.exp() * normal_sf(a / t.sqrt())
}
