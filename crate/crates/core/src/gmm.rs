//! One-dimensional Gaussian mixtures fitted by expectation-maximization.
//!
//! The E-step runs in log space (log-sum-exp per point) so stacks that mix
//! magnitudes, e.g. calendar years next to ratios, do not underflow. The
//! M-step accumulates sufficient statistics relative to the current means,
//! which keeps the variance update stable for large-offset data.
//!
//! Restarts are independent: restart `r` draws from its own RNG seeded with
//! `seed + r`, so they can run in parallel without changing the result.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_COMPONENTS: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_SEED: u64 = 42;

/// Floor relative to the pooled variance when none is configured.
const RELATIVE_VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_components: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub n_restarts: usize,
    pub seed: u64,
    /// Absolute lower bound on component variances. `None` means
    /// `1e-6 × pooled variance`.
    #[serde(default)]
    pub variance_floor: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_components: DEFAULT_COMPONENTS,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            n_restarts: DEFAULT_RESTARTS,
            seed: DEFAULT_SEED,
            variance_floor: None,
        }
    }
}

impl FitConfig {
    pub fn with_components(&self, k: usize) -> Self {
        Self {
            n_components: k,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::InvalidArgument("component count must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidArgument("restart count must be at least 1".into()));
        }
        if let Some(f) = self.variance_floor {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "variance floor must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// A fitted mixture with components in ascending-mean order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Total log-likelihood of the fitted stack.
    pub log_likelihood: f64,
    pub n_iterations: usize,
    pub seed: u64,
    pub config: FitConfig,
    /// Final log-likelihood of every restart, in restart order.
    #[serde(default)]
    pub restart_log_likelihoods: Vec<f64>,
    /// Settings of the command that produced the model, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl GmmModel {
    /// Hand-built model, mostly for tests and tooling. Components are kept in
    /// the given order.
    pub fn from_parts(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        let model = Self {
            k,
            weights,
            means,
            variances,
            log_likelihood: 0.0,
            n_iterations: 0,
            seed: 0,
            config: FitConfig::default().with_components(k.max(1)),
            restart_log_likelihoods: Vec::new(),
            run_config: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || self.weights.len() != k || self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidArgument(format!(
                "model declares k = {k} but has {}/{}/{} weights/means/variances",
                self.weights.len(),
                self.means.len(),
                self.variances.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be finite and non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("component means must be finite".into()));
        }
        if let Some(v) = self.variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveVariance(*v));
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * gaussian_pdf(x, *m, *v))
            .sum()
    }

    pub fn responsibilities(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.k];
        self.evaluator().responsibilities_into(x, &mut out)?;
        Ok(out)
    }

    /// Precomputes per-component log constants for repeated evaluation.
    pub fn evaluator(&self) -> Evaluator {
        Evaluator::new(&self.weights, &self.means, &self.variances)
    }

    /// `−2 ln L + (3K − 1) ln n`.
    pub fn bic(&self, n: usize) -> f64 {
        let params = (3 * self.k - 1) as f64;
        -2.0 * self.log_likelihood + params * (n as f64).ln()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }
}

fn gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Normal density `(2πσ²)^(-1/2) · exp(−(x−μ)²/(2σ²))`.
pub fn component_pdf(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::NonPositiveVariance(variance));
    }
    Ok(gaussian_pdf(x, mean, variance))
}

pub fn mixture_pdf(x: f64, model: &GmmModel) -> f64 {
    model.pdf(x)
}

pub fn responsibilities(x: f64, model: &GmmModel) -> Result<Vec<f64>> {
    model.responsibilities(x)
}

/// Log-space evaluation of a mixture at one point at a time.
#[derive(Debug, Clone)]
pub struct Evaluator {
    means: Vec<f64>,
    /// `ln π_j − ½ ln(2π σ_j²)`
    offsets: Vec<f64>,
    /// `1 / (2σ_j²)`
    inv_two_var: Vec<f64>,
}

impl Evaluator {
    fn new(weights: &[f64], means: &[f64], variances: &[f64]) -> Self {
        let offsets = weights
            .iter()
            .zip(variances)
            .map(|(w, v)| w.ln() - 0.5 * (LN_2PI + v.ln()))
            .collect();
        let inv_two_var = variances.iter().map(|v| 0.5 / v).collect();
        Self {
            means: means.to_vec(),
            offsets,
            inv_two_var,
        }
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Writes `π_j N(x | μ_j, σ_j²)` scaled by `exp(−max)` into `buf` and
    /// returns `(max, sum)` so that `ln p(x) = max + ln sum`.
    fn scaled_terms(&self, x: f64, buf: &mut [f64]) -> Result<(f64, f64)> {
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in buf.iter_mut().enumerate() {
            let d = x - self.means[j];
            let a = self.offsets[j] - d * d * self.inv_two_var[j];
            *slot = a;
            if a > max {
                max = a;
            }
        }
        if !max.is_finite() {
            return Err(Error::DensityUnderflow(x));
        }
        let mut sum = 0.0;
        for slot in buf.iter_mut() {
            *slot = (*slot - max).exp();
            sum += *slot;
        }
        Ok((max, sum))
    }

    /// Fills `out` with the posterior component probabilities of `x`.
    pub fn responsibilities_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        let (_, sum) = self.scaled_terms(x, out)?;
        for g in out.iter_mut() {
            *g /= sum;
        }
        Ok(())
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        let mut buf = vec![0.0; self.k()];
        let (max, sum) = self.scaled_terms(x, &mut buf)?;
        Ok(max + sum.ln())
    }
}

/// Log-likelihood trajectory of one EM restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub restart: usize,
    pub seed: u64,
    /// Total log-likelihood after initialization and after every M-step.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: GmmModel,
    pub best_restart: usize,
    pub runs: Vec<RunTrace>,
}

pub fn fit(stack: &[f64], cfg: &FitConfig) -> Result<GmmModel> {
    fit_with_trace(stack, cfg).map(|o| o.model)
}

/// Fits `cfg.n_restarts` independent EM runs and keeps the one with the
/// highest final log-likelihood (ties go to the lowest restart index).
pub fn fit_with_trace(stack: &[f64], cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if stack.is_empty() {
        return Err(Error::InvalidArgument("cannot fit an empty stack".into()));
    }
    if let Some(v) = stack.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("stack contains non-finite value {v}")));
    }
    let k = cfg.n_components;
    let distinct = count_distinct(stack);
    if distinct < k {
        return Err(Error::TooFewDistinct { distinct, k });
    }

    let n = stack.len() as f64;
    let mean = stack.iter().sum::<f64>() / n;
    let pooled_var = stack.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let floor = match cfg.variance_floor {
        Some(f) => f,
        None if pooled_var > 0.0 => RELATIVE_VARIANCE_FLOOR * pooled_var,
        None => RELATIVE_VARIANCE_FLOOR * (mean * mean).max(1.0),
    };
    let init_var = pooled_var.max(floor);

    let runs = par::map_range(cfg.n_restarts, |r| {
        let seed = cfg.seed.wrapping_add(r as u64);
        run_em(stack, k, seed, init_var, floor, cfg).map(|(params, mut trace, iters)| {
            trace.restart = r;
            (params, trace, iters)
        })
    });

    let mut best: Option<(usize, Params, usize)> = None;
    let mut traces = Vec::with_capacity(runs.len());
    let mut finals = Vec::with_capacity(runs.len());
    for (r, run) in runs.into_iter().enumerate() {
        let (params, trace, iters) = run?;
        let ll = *trace.log_likelihoods.last().expect("trace is never empty");
        finals.push(ll);
        let better = match &best {
            None => true,
            Some((b, _, _)) => ll > finals[*b],
        };
        if better {
            best = Some((r, params, iters));
        }
        traces.push(trace);
    }
    let (best_restart, params, n_iterations) = best.expect("at least one restart");

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        params.means[a]
            .total_cmp(&params.means[b])
            .then(params.weights[a].total_cmp(&params.weights[b]))
            .then(params.variances[a].total_cmp(&params.variances[b]))
    });
    let model = GmmModel {
        k,
        weights: order.iter().map(|&j| params.weights[j]).collect(),
        means: order.iter().map(|&j| params.means[j]).collect(),
        variances: order.iter().map(|&j| params.variances[j]).collect(),
        log_likelihood: finals[best_restart],
        n_iterations,
        seed: cfg.seed.wrapping_add(best_restart as u64),
        config: cfg.clone(),
        restart_log_likelihoods: finals,
        run_config: None,
    };
    Ok(FitOutcome {
        model,
        best_restart,
        runs: traces,
    })
}

fn count_distinct(values: &[f64]) -> usize {
    // +0.0 and -0.0 compare equal and count once.
    values
        .iter()
        .map(|v| if *v == 0.0 { 0u64 } else { v.to_bits() })
        .collect::<HashSet<_>>()
        .len()
}

#[derive(Debug, Clone)]
struct Params {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

struct Stats {
    log_likelihood: f64,
    /// Σγ, Σγ(x−μ), Σγ(x−μ)² per component, relative to current means.
    resp: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

fn e_step(stack: &[f64], params: &Params) -> Result<Stats> {
    let k = params.means.len();
    let eval = Evaluator::new(&params.weights, &params.means, &params.variances);
    let mut buf = vec![0.0; k];
    let mut stats = Stats {
        log_likelihood: 0.0,
        resp: vec![0.0; k],
        first: vec![0.0; k],
        second: vec![0.0; k],
    };
    for &x in stack {
        let (max, sum) = eval.scaled_terms(x, &mut buf)?;
        stats.log_likelihood += max + sum.ln();
        let inv = 1.0 / sum;
        for (j, scaled) in buf.iter().enumerate() {
            let g = scaled * inv;
            let d = x - params.means[j];
            stats.resp[j] += g;
            stats.first[j] += g * d;
            stats.second[j] += g * d * d;
        }
    }
    Ok(stats)
}

fn m_step(stats: &Stats, params: &Params, floor: f64) -> Params {
    let k = params.means.len();
    let total: f64 = stats.resp.iter().sum();
    let mut next = params.clone();
    for j in 0..k {
        let nk = stats.resp[j];
        next.weights[j] = nk / total;
        // A component with no mass keeps its location and spread.
        if nk > 1e3 * f64::MIN_POSITIVE {
            let shift = stats.first[j] / nk;
            next.means[j] = params.means[j] + shift;
            next.variances[j] = (stats.second[j] / nk - shift * shift).max(floor);
        }
    }
    next
}

fn initial_means(stack: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Incremental Fisher-Yates over positions; the first k distinct values win.
    let mut idx: Vec<usize> = (0..stack.len()).collect();
    let mut seen = HashSet::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    for i in 0..idx.len() {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
        let v = stack[idx[i]];
        let key = if v == 0.0 { 0u64 } else { v.to_bits() };
        if seen.insert(key) {
            means.push(v);
            if means.len() == k {
                break;
            }
        }
    }
    means
}

fn run_em(
    stack: &[f64],
    k: usize,
    seed: u64,
    init_var: f64,
    floor: f64,
    cfg: &FitConfig,
) -> Result<(Params, RunTrace, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params {
        weights: vec![1.0 / k as f64; k],
        means: initial_means(stack, k, &mut rng),
        variances: vec![init_var; k],
    };
    let n = stack.len() as f64;
    let mut stats = e_step(stack, &params)?;
    let mut trace = vec![stats.log_likelihood];
    let mut converged = false;
    let mut iters = 0;
    while iters < cfg.max_iter {
        params = m_step(&stats, &params, floor);
        let next = e_step(stack, &params)?;
        iters += 1;
        let delta = (next.log_likelihood - stats.log_likelihood) / n;
        trace.push(next.log_likelihood);
        stats = next;
        if delta.abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    let trace = RunTrace {
        restart: 0,
        seed,
        log_likelihoods: trace,
        converged,
    };
    Ok((params, trace, iters))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicSelection {
    pub best_k: usize,
    pub scores: BTreeMap<usize, f64>,
}

/// Fits every candidate component count and returns the BIC minimizer;
/// ties go to the smaller count.
pub fn select_components_bic(
    stack: &[f64],
    candidates: &[usize],
    cfg: &FitConfig,
) -> Result<BicSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no BIC candidates given".into()));
    }
    let mut ks: Vec<usize> = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut scores = BTreeMap::new();
    for &k in &ks {
        let model = fit(stack, &cfg.with_components(k))?;
        scores.insert(k, model.bic(stack.len()));
    }
    let best_k = scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
        .map(|(k, _)| *k)
        .expect("non-empty");
    Ok(BicSelection { best_k, scores })
}
