//! Numeric-only column encoders used as comparison points for Gem.
//!
//! PLE and PAF are per-value encoders; here each column is represented by
//! the mean of its value encodings. The KS fingerprint fits seven reference
//! families by method of moments and records the one-sample KS statistic
//! against each. Squashing-GMM log-compresses values before fitting a mixture
//! of prototypes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Gamma, LogNormal, Normal};

use crate::column_store::{Corpus, NumericColumn};
use crate::error::{Error, Result};
use crate::gmm::{self, FitConfig, GmmModel};
use crate::par;
use crate::signature::{mean_component_probs, percentile};

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_FREQUENCIES: usize = 50;
pub const DEFAULT_PROTOTYPES: usize = 50;

pub const KS_DISTRIBUTIONS: [&str; 7] = [
    "normal",
    "uniform",
    "exponential",
    "beta",
    "gamma",
    "lognormal",
    "logistic",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub n_bins: usize,
    pub n_frequencies: usize,
    pub n_prototypes: usize,
    pub ks_distributions: Vec<String>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n_bins: DEFAULT_BINS,
            n_frequencies: DEFAULT_FREQUENCIES,
            n_prototypes: DEFAULT_PROTOTYPES,
            ks_distributions: KS_DISTRIBUTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || self.n_frequencies == 0 || self.n_prototypes == 0 {
            return Err(Error::InvalidArgument(
                "bin, frequency and prototype counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- PLE

/// Empirical quantile boundaries `b_0..b_T` of the pooled stack. Tied
/// quantiles collapse, so fewer than `n_bins` segments may come back.
pub fn ple_bins(stack: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    if stack.is_empty() || n_bins == 0 {
        return Err(Error::InvalidArgument("PLE needs a non-empty stack and ≥ 1 bin".into()));
    }
    let mut sorted = stack.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut bins: Vec<f64> = (0..=n_bins)
        .map(|t| percentile(&sorted, t as f64 / n_bins as f64))
        .collect();
    bins.dedup();
    if bins.len() < 2 {
        return Err(Error::NonIncreasingBoundaries);
    }
    Ok(bins)
}

/// Piecewise-linear encoding of a single value against boundaries `bins`.
pub fn ple_value(x: f64, bins: &[f64], out: &mut [f64]) {
    let x = x.clamp(bins[0], bins[bins.len() - 1]);
    for (t, slot) in out.iter_mut().enumerate() {
        let (lo, hi) = (bins[t], bins[t + 1]);
        *slot = if x < lo {
            0.0
        } else if x >= hi {
            1.0
        } else {
            (x - lo) / (hi - lo)
        };
    }
}

pub fn ple_encode(col: &NumericColumn, bins: &[f64]) -> Result<Vec<f64>> {
    if bins.len() < 2 || bins.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::NonIncreasingBoundaries);
    }
    let t = bins.len() - 1;
    let mut acc = vec![0.0; t];
    let mut buf = vec![0.0; t];
    for &x in &col.values {
        ple_value(x, bins, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    let n = col.values.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

// ---------------------------------------------------------------- PAF

/// Log-spaced frequencies `2^(k − F/2)`, `k = 1..F`.
pub fn paf_frequencies(n: usize) -> Vec<f64> {
    let half = n as f64 / 2.0;
    (1..=n).map(|k| (k as f64 - half).exp2()).collect()
}

/// Pooled min-max scaling onto `[0, 1]`; a constant stack maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn of(stack: &[f64]) -> Self {
        let min = stack.iter().copied().fold(f64::INFINITY, f64::min);
        let max = stack.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Interleaved `[sin 2πc₁x, cos 2πc₁x, sin 2πc₂x, …]` for an already scaled `x`.
pub fn paf_value(x: f64, frequencies: &[f64], out: &mut [f64]) {
    for (k, c) in frequencies.iter().enumerate() {
        let (s, co) = (std::f64::consts::TAU * c * x).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = co;
    }
}

pub fn paf_encode(col: &NumericColumn, frequencies: &[f64], scaler: MinMax) -> Vec<f64> {
    let mut acc = vec![0.0; 2 * frequencies.len()];
    let mut buf = acc.clone();
    for &x in &col.values {
        paf_value(scaler.scale(x), frequencies, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    let n = col.values.len() as f64;
    acc.into_iter().map(|a| a / n).collect()
}

// ---------------------------------------------------------------- KS

/// Two-sided one-sample KS statistic over sorted data:
/// `max_i max(i/n − F(x_(i)), F(x_(i)) − (i−1)/n)`.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    d.clamp(0.0, 1.0)
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v)
}

/// Shifts zero-touching non-negative data off zero; `None` when any value is
/// negative (outside a positive support).
fn positive_support(sorted: &[f64]) -> Option<Vec<f64>> {
    let min = sorted[0];
    if min < 0.0 {
        return None;
    }
    if min > 0.0 {
        return Some(sorted.to_vec());
    }
    let eps = 1e-9 * sorted[sorted.len() - 1].abs().max(1.0);
    Some(sorted.iter().map(|x| x + eps).collect())
}

fn ks_family(family: &str, sorted: &[f64]) -> f64 {
    const UNSUPPORTED: f64 = 1.0;
    let (m, v) = moments(sorted);
    let scale_floor = 1e-12 * m.abs().max(1.0);
    let sd = v.sqrt().max(scale_floor);
    match family {
        "normal" => match Normal::new(m, sd) {
            Ok(d) => ks_statistic(sorted, |x| d.cdf(x)),
            Err(_) => UNSUPPORTED,
        },
        "uniform" => {
            let half = 3f64.sqrt() * sd;
            let (a, b) = (m - half, m + half);
            ks_statistic(sorted, |x| ((x - a) / (b - a)).clamp(0.0, 1.0))
        }
        "logistic" => {
            let s = sd * 3f64.sqrt() / std::f64::consts::PI;
            ks_statistic(sorted, |x| 1.0 / (1.0 + (-(x - m) / s).exp()))
        }
        "exponential" => match positive_support(sorted) {
            Some(xs) => {
                let (m, _) = moments(&xs);
                let rate = 1.0 / m;
                ks_statistic(&xs, |x| 1.0 - (-rate * x).exp())
            }
            None => UNSUPPORTED,
        },
        "gamma" => match positive_support(sorted) {
            Some(xs) => {
                let (m, v) = moments(&xs);
                let v = v.max(scale_floor * scale_floor);
                match Gamma::new(m * m / v, m / v) {
                    Ok(d) => ks_statistic(&xs, |x| d.cdf(x)),
                    Err(_) => UNSUPPORTED,
                }
            }
            None => UNSUPPORTED,
        },
        "lognormal" => match positive_support(sorted) {
            Some(xs) => {
                let (m, v) = moments(&xs);
                let s2 = (1.0 + v / (m * m)).ln().max(1e-24);
                match LogNormal::new(m.ln() - s2 / 2.0, s2.sqrt()) {
                    Ok(d) => ks_statistic(&xs, |x| d.cdf(x)),
                    Err(_) => UNSUPPORTED,
                }
            }
            None => UNSUPPORTED,
        },
        "beta" => {
            if sorted[0] < 0.0 || sorted[sorted.len() - 1] > 1.0 {
                return UNSUPPORTED;
            }
            let eps = 1e-9;
            let xs: Vec<f64> = sorted.iter().map(|x| x.clamp(eps, 1.0 - eps)).collect();
            let (m, v) = moments(&xs);
            let v = v.max(1e-24);
            let common = m * (1.0 - m) / v - 1.0;
            if !(common > 0.0) {
                return UNSUPPORTED;
            }
            match Beta::new(m * common, (1.0 - m) * common) {
                Ok(d) => ks_statistic(&xs, |x| d.cdf(x)),
                Err(_) => UNSUPPORTED,
            }
        }
        _ => UNSUPPORTED,
    }
}

/// KS statistics against method-of-moments fits of the reference families,
/// in [`KS_DISTRIBUTIONS`] order.
pub fn ks_fingerprint(col: &NumericColumn) -> Result<Vec<f64>> {
    if col.values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "KS fingerprint of {} needs at least 2 values",
            col.id
        )));
    }
    let mut sorted = col.values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(KS_DISTRIBUTIONS.iter().map(|f| ks_family(f, &sorted)).collect())
}

// ---------------------------------------------------------------- Squashing-GMM

/// `sign(v) · ln(1 + |v|)`
pub fn squash(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

#[derive(Debug, Clone)]
pub struct SquashingGmm {
    pub model: GmmModel,
    pub vectors: Vec<Vec<f64>>,
}

pub fn squashing_gmm_encode(corpus: &Corpus, cfg: &BaselineConfig, fit_cfg: &FitConfig) -> Result<SquashingGmm> {
    cfg.validate()?;
    let squashed: Vec<NumericColumn> = corpus
        .columns
        .iter()
        .map(|c| NumericColumn {
            values: c.values.iter().map(|v| squash(*v)).collect(),
            ..c.clone()
        })
        .collect();
    let stack: Vec<f64> = squashed.iter().flat_map(|c| c.values.iter().copied()).collect();
    let model = gmm::fit(&stack, &fit_cfg.with_components(cfg.n_prototypes))?;
    let vectors = par::try_map(&squashed, |c| mean_component_probs(c, &model))?;
    Ok(SquashingGmm { model, vectors })
}

// ---------------------------------------------------------------- corpus-level

pub fn ple_corpus(corpus: &Corpus, n_bins: usize) -> Result<Vec<Vec<f64>>> {
    let bins = ple_bins(&corpus.pooled_stack(), n_bins)?;
    par::try_map(&corpus.columns, |c| ple_encode(c, &bins))
}

pub fn paf_corpus(corpus: &Corpus, n_frequencies: usize) -> Vec<Vec<f64>> {
    let freqs = paf_frequencies(n_frequencies);
    let scaler = MinMax::of(&corpus.pooled_stack());
    par::map(&corpus.columns, |c| paf_encode(c, &freqs, scaler))
}

pub fn ks_corpus(corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    par::try_map(&corpus.columns, ks_fingerprint)
}
