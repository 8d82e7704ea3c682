//! Subcommand implementations. Each writes JSON-lines records to `out`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context as _, Result};
use bbmlab::analytic::{centering, gamma, DEFAULT_WINDOW_A, DEFAULT_WINDOW_B};
use bbmlab::diagnostics::{moment_identity_checks, run_conditioned_diagnostics, DiagnosticsOptions};
use bbmlab::estimators::{
    cstar_estimate, deviation_probability, estimate_tail_direct, lambda_expectation, tail_curve, DirectOptions,
    LambdaOptions, StderrMode,
};
use bbmlab::io::{load_curve, save_curve};
use bbmlab::rng::Stream;
use bbmlab::{
    ConditionedStats, DeviationQuery, Estimate, FunctionalSpec, GridSpec, Replicas, SimConfig, SkeletonTree, TailCurve,
};
use serde::Serialize;

use crate::checks::{run_suite, Context, Sizes};
use crate::config::{ConfigError, ExperimentConfig};

/// One output line: the result plus everything needed to reproduce it.
#[derive(Serialize)]
struct Record<'a, T: Serialize> {
    command: &'a str,
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_secs: Option<f64>,
    result: T,
}

/// Writes records for one resolved configuration.
pub struct Emitter<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    hash: String,
    timing: bool,
    out: &'a mut dyn Write,
}

impl<'a> Emitter<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, timing: bool, out: &'a mut dyn Write) -> Self {
        Emitter { command, config, hash: config.hash(), timing, out }
    }

    pub fn emit<T: Serialize>(&mut self, result: T, elapsed: Option<f64>) -> Result<()> {
        let rec = Record {
            command: self.command,
            config: self.config,
            config_hash: &self.hash,
            seed: self.config.seed(),
            elapsed_secs: elapsed.filter(|_| self.timing),
            result,
        };
        serde_json::to_writer(&mut *self.out, &rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn estimate(&self, mut e: Estimate) -> Estimate {
        if !self.timing {
            e.elapsed_secs = None;
        }
        e
    }
}

fn sim_config(cfg: &ExperimentConfig) -> SimConfig {
    let mut sim = SimConfig::default();
    if let Some(cap) = cfg.pop_cap {
        sim = sim.with_pop_cap(cap);
    }
    sim.knot_only = cfg.knot_only.unwrap_or(false);
    sim
}

fn replicas(cfg: &ExperimentConfig, n: u64) -> Replicas {
    Replicas::new(cfg.seed(), n).with_workers(cfg.workers())
}

fn window(cfg: &ExperimentConfig) -> (f64, f64) {
    (cfg.window_a.unwrap_or(DEFAULT_WINDOW_A), cfg.window_b.unwrap_or(DEFAULT_WINDOW_B))
}

fn grid(cfg: &ExperimentConfig, ell: f64) -> Result<GridSpec> {
    let d = GridSpec::for_ell(ell);
    Ok(GridSpec::new(
        cfg.grid_min.unwrap_or(d.y_min),
        cfg.grid_max.unwrap_or(d.y_max),
        cfg.grid_step.unwrap_or(d.step),
    )?)
}

fn table(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Serialize)]
struct RunRecord {
    replica: u64,
    max_displacement: f64,
    centered_max: f64,
    population: u64,
}

/// `simulate`: one summary line per replica; optional tree dumps.
pub fn simulate(cfg: &ExperimentConfig, dump: Option<&Path>, em: &mut Emitter) -> Result<()> {
    let t = cfg.require_f64(cfg.t, "t")?;
    let n = cfg.n.unwrap_or(1);
    let sim = sim_config(cfg);
    let m = centering(t)?;
    let reps = replicas(cfg, n);
    let mut dump = dump.map(table).transpose()?;
    for i in 0..n {
        let tree = SkeletonTree::simulate(t, &sim, &mut reps.rng(Stream::Tree, i))?;
        let max = tree.max_displacement();
        em.emit(RunRecord { replica: i, max_displacement: max, centered_max: max - m, population: tree.population() }, None)?;
        if let Some(w) = dump.as_mut() {
            serde_json::to_writer(&mut *w, &tree.dump())?;
            w.write_all(b"\n")?;
        }
    }
    if let Some(mut w) = dump {
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TailRecord {
    t: f64,
    x: f64,
    level: f64,
    estimate: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio_to_gamma: Option<f64>,
}

/// `tail`: direct frequency estimate of `P(M_t > m_t + x)`.
pub fn tail(cfg: &ExperimentConfig, table_path: Option<&Path>, em: &mut Emitter) -> Result<()> {
    let t = cfg.require_f64(cfg.t, "t")?;
    let x = cfg.require_f64(cfg.x, "x")?;
    let n = cfg.require_n()?;
    let opts = DirectOptions { sim: sim_config(cfg), ..Default::default() };
    let est = estimate_tail_direct(t, x, &replicas(cfg, n), &opts)?;
    let elapsed = est.elapsed_secs;
    let g = gamma(t, x).ok();
    let rec = TailRecord {
        t,
        x,
        level: centering(t)? + x,
        estimate: em.estimate(est),
        gamma: g,
        ratio_to_gamma: g.map(|g| est.value / g),
    };
    if let Some(p) = table_path {
        let mut w = csv::Writer::from_writer(table(p)?);
        w.write_record(["t", "x", "estimate", "stderr", "gamma", "ratio"])?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        w.write_record([
            format!("{t}"),
            format!("{x}"),
            format!("{:e}", est.value),
            format!("{:e}", est.stderr),
            opt(rec.gamma),
            opt(rec.ratio_to_gamma),
        ])?;
        w.flush()?;
    }
    em.emit(rec, elapsed)
}

#[derive(Serialize)]
struct CurveRecord {
    ell: f64,
    n_replicas: u64,
    y_min: f64,
    y_max: f64,
    step: f64,
    points: usize,
    envelope_k: Option<f64>,
    monotone_violation: bool,
}

fn curve_record(c: &TailCurve, spec: &GridSpec) -> CurveRecord {
    CurveRecord {
        ell: c.ell,
        n_replicas: c.n_replicas,
        y_min: spec.y_min,
        y_max: spec.y_max,
        step: spec.step,
        points: c.grid.len(),
        envelope_k: c.envelope_constant(bbmlab::estimators::ENVELOPE_MIN_HITS),
        monotone_violation: c.monotone_violation,
    }
}

fn simulate_curve(cfg: &ExperimentConfig) -> Result<(TailCurve, GridSpec, f64)> {
    let ell = cfg.require_f64(cfg.ell, "ell")?;
    let n = cfg.require_n()?;
    let spec = grid(cfg, ell)?;
    let start = std::time::Instant::now();
    let curve = tail_curve(ell, &replicas(cfg, n), &spec, &sim_config(cfg))?;
    Ok((curve, spec, start.elapsed().as_secs_f64()))
}

/// `curve`: empirical tail curve of `M_ell - sqrt2 ell`, saved as CSV.
pub fn curve(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let path = cfg.curve.as_deref().ok_or_else(|| ConfigError::new("--curve <path> is required for the output curve"))?;
    let (curve, spec, secs) = simulate_curve(cfg)?;
    save_curve(&curve, path)?;
    em.emit(curve_record(&curve, &spec), Some(secs))
}

/// `cstar`: limiting constant from a saved curve, or from a fresh one.
pub fn cstar(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let start = std::time::Instant::now();
    let curve = match (&cfg.curve, cfg.ell) {
        (Some(p), _) => load_curve(p)?,
        (None, Some(_)) => simulate_curve(cfg)?.0,
        (None, None) => return Err(ConfigError::new("cstar needs --curve <path> or --ell with --n").into()),
    };
    let mut est = cstar_estimate(&curve, StderrMode::default())?;
    est.estimate = em.estimate(est.estimate);
    em.emit(est, Some(start.elapsed().as_secs_f64()))
}

#[derive(Serialize)]
struct DeviationRecord {
    t: f64,
    x: f64,
    ell: f64,
    estimate: Estimate,
    window: Estimate,
    complement: Estimate,
    window_lo: f64,
    window_hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    warnings: Vec<String>,
}

/// `deviation`: hybrid estimate of `P(M_t > m_t + x)` from a saved curve.
pub fn deviation(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<()> {
    let t = cfg.require_f64(cfg.t, "t")?;
    let x = cfg.require_f64(cfg.x, "x")?;
    let ell = cfg.require_f64(cfg.ell, "ell")?;
    let path = cfg.curve.as_deref().ok_or_else(|| ConfigError::new("--curve <path> is required"))?;
    let curve = load_curve(path)?;
    let (a, b) = window(cfg);
    let q = DeviationQuery::with_window(t, x, ell, a, b)?;
    let opts = LambdaOptions::default();
    let parts = lambda_expectation(&q, &curve, &opts)?;
    let est = deviation_probability(&q, &curve, &opts)?;
    let rec = DeviationRecord {
        t,
        x,
        ell,
        estimate: est,
        window: parts.window,
        complement: parts.complement,
        window_lo: parts.window_lo,
        window_hi: parts.window_hi,
        gamma: gamma(t, x).ok(),
        warnings: parts.warnings,
    };
    em.emit(rec, None)
}

/// Parses `constant`, `above:<a>` or `interval:<lo>:<hi>`.
pub fn parse_functional(s: &str) -> Result<FunctionalSpec, ConfigError> {
    let bad = || ConfigError::new(format!("bad functional {s:?}; use constant, above:<a> or interval:<lo>:<hi>"));
    let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    match parts[..] {
        ["constant"] => Ok(FunctionalSpec::Constant),
        ["above", a] => Ok(FunctionalSpec::EndpointAbove { level: num(a)? }),
        ["interval", lo, hi] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if lo < hi {
                Ok(FunctionalSpec::EndpointInInterval { lo, hi })
            } else {
                Err(bad())
            }
        }
        _ => Err(bad()),
    }
}

#[derive(Serialize)]
struct DiagnosticsRecord<'a> {
    success_rate: Estimate,
    crossing_rate: Option<Estimate>,
    single_minus_multiple: Option<Estimate>,
    gap_window_fraction: Option<Estimate>,
    second_moment_ratio: Option<Estimate>,
    stats: &'a ConditionedStats,
}

/// `diagnose`: conditioned structure of successful runs, or the
/// many-to-few identities with `--functional`.
pub fn diagnose(cfg: &ExperimentConfig, table_path: Option<&Path>, em: &mut Emitter) -> Result<()> {
    let t = cfg.require_f64(cfg.t, "t")?;
    let n = cfg.require_n()?;
    let sim = sim_config(cfg);
    if let Some(f) = &cfg.functional {
        let spec = parse_functional(f)?;
        let report = moment_identity_checks(t, &spec, &replicas(cfg, n), &sim)?;
        return em.emit(report, None);
    }
    let x = cfg.require_f64(cfg.x, "x")?;
    let ell = cfg.require_f64(cfg.ell, "ell")?;
    let (a, b) = window(cfg);
    let q = DeviationQuery::for_diagnostics(t, x, ell, a, b)?;
    let stats = run_conditioned_diagnostics(&q, &replicas(cfg, n), &DiagnosticsOptions { sim })?;
    if let Some(p) = table_path {
        let mut w = csv::Writer::from_writer(table(p)?);
        w.write_record(["lambda", "count", "fraction"])?;
        for (k, c) in &stats.multiplicity {
            let frac = *c as f64 / stats.n_success as f64;
            w.write_record([k.to_string(), c.to_string(), format!("{frac:e}")])?;
        }
        w.flush()?;
    }
    let rec = DiagnosticsRecord {
        success_rate: stats.success_rate(),
        crossing_rate: stats.crossing_rate(),
        single_minus_multiple: stats.single_minus_multiple(),
        gap_window_fraction: stats.gap_window_fraction(),
        second_moment_ratio: stats.second_moment_ratio(),
        stats: &stats,
    };
    em.emit(rec, None)
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    suite: &'a str,
    passed: usize,
    failed: usize,
}

/// `verify`: runs a check suite; returns whether every check passed.
pub fn verify(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<bool> {
    let suite = cfg.suite.as_deref().unwrap_or("all");
    let ctx = Context::new(cfg.seed(), cfg.workers(), Sizes::full(), sim_config(cfg));
    let checks = run_suite(suite, &ctx)?;
    for c in &checks {
        em.emit(c, Some(c.elapsed_secs))?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    em.emit(VerifySummary { suite, passed: checks.len() - failed, failed }, None)?;
    Ok(failed == 0)
}
