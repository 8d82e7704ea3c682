//! Estimates, streaming moment accumulators and a few distribution helpers.

use serde::{Deserialize, Serialize};

use std::fmt;

/// How an [`Estimate`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Hybrid,
    Cstar,
    Oracle,
    Diagnostic,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Direct => "direct",
            Method::Hybrid => "hybrid",
            Method::Cstar => "cstar",
            Method::Oracle => "oracle",
            Method::Diagnostic => "diagnostic",
        };
        f.write_str(s)
    }
}

/// A point estimate with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_replicas: u64,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Wall time. Left out of serialized output unless set, so that
    /// persisted results stay byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_secs: Option<f64>,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64, n_replicas: u64, method: Method) -> Self {
        debug_assert!(stderr >= 0.0 || stderr.is_nan());
        Estimate { value, stderr, n_replicas, method, seed: None, elapsed_secs: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_elapsed(mut self, secs: f64) -> Self {
        self.elapsed_secs = Some(secs);
        self
    }

    /// `(self - other) / sqrt(se1^2 + se2^2)`.
    pub fn z_against(&self, other: &Estimate) -> f64 {
        (self.value - other.value) / self.stderr.hypot(other.stderr)
    }

    /// `(self - target) / stderr`.
    pub fn z_to(&self, target: f64) -> f64 {
        (self.value - target) / self.stderr
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6e} ± {:.2e} ({}, n={})", self.value, self.stderr, self.method, self.n_replicas)
    }
}

/// Running (count, sum, sum of squares).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }

    pub fn estimate(&self, method: Method) -> Estimate {
        Estimate::new(self.mean(), self.stderr(), self.count, method)
    }
}

/// Frequency estimate `k/n` with binomial standard error.
pub fn binomial_estimate(hits: u64, n: u64, method: Method) -> Estimate {
    let p = hits as f64 / n as f64;
    Estimate::new(p, (p * (1.0 - p) / n as f64).sqrt(), n, method)
}

/// Standard normal upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Asymptotic Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test of integer samples against a discrete
/// CDF. Returns `(D, p)`; the continuous-law p-value is conservative for
/// discrete laws.
pub fn ks_discrete(samples: &[u64], cdf: impl Fn(u64) -> f64) -> (f64, f64) {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let k = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == k {
            j += 1;
        }
        let f = cdf(k);
        // just below k the empirical CDF is i/n, the law's is cdf(k-1)
        let below = if k == 0 { 0.0 } else { cdf(k - 1) };
        d = d.max((j as f64 / n - f).abs()).max((i as f64 / n - below).abs());
        i = j;
    }
    let sqrt_n = n.sqrt();
    let p = kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
    (d, p)
}
