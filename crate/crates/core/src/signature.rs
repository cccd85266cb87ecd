//! Per-column Gem signatures.
//!
//! A signature row is the column's mean component responsibilities followed
//! by seven corpus-standardized statistics, divided by the L1 norm of the
//! whole row. Standardized statistics may be negative; the row keeps its signs
//! and only the absolute sum is normalized to one.

use serde::{Deserialize, Serialize};

use crate::column_store::{ColumnId, Corpus, NumericColumn};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::par;

pub const N_STAT_FEATURES: usize = 7;

pub const STAT_FEATURE_NAMES: [&str; N_STAT_FEATURES] =
    ["unique_count", "mean", "cv", "entropy", "range", "p10", "p90"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatFeatures {
    pub unique_count: f64,
    pub mean: f64,
    /// Population std over mean; 0 when the mean is 0.
    pub cv: f64,
    /// Shannon entropy (nats) of the distinct-value frequencies.
    pub entropy: f64,
    pub range: f64,
    pub p10: f64,
    pub p90: f64,
}

impl StatFeatures {
    pub fn to_array(&self) -> [f64; N_STAT_FEATURES] {
        [
            self.unique_count,
            self.mean,
            self.cv,
            self.entropy,
            self.range,
            self.p10,
            self.p90,
        ]
    }
}

/// Linear-interpolation percentile at rank `(n − 1)·p` of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let q = (sorted.len() - 1) as f64 * p;
    let lo = q.floor() as usize;
    let hi = q.ceil() as usize;
    let frac = q - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn stat_features(col: &NumericColumn) -> StatFeatures {
    stat_features_of(&col.values)
}

pub fn stat_features_of(values: &[f64]) -> StatFeatures {
    assert!(!values.is_empty(), "statistics of an empty column");
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let cv = if mean == 0.0 { 0.0 } else { var.sqrt() / mean };

    let mut unique = 0usize;
    let mut entropy = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        let p = (end - start) as f64 / n;
        entropy -= p * p.ln();
        unique += 1;
        start = end;
    }

    StatFeatures {
        unique_count: unique as f64,
        mean,
        cv,
        entropy: entropy.max(0.0),
        range: sorted[sorted.len() - 1] - sorted[0],
        p10: percentile(&sorted, 0.10),
        p90: percentile(&sorted, 0.90),
    }
}

/// Per-feature z-scoring fitted on a corpus, reusable on held-out columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: [f64; N_STAT_FEATURES],
    /// Population standard deviations.
    pub stds: [f64; N_STAT_FEATURES],
}

impl Standardizer {
    pub fn fit(all: &[StatFeatures]) -> Result<Self> {
        if all.is_empty() {
            return Err(Error::InvalidArgument("cannot standardize zero columns".into()));
        }
        let n = all.len() as f64;
        let rows: Vec<[f64; N_STAT_FEATURES]> = all.iter().map(StatFeatures::to_array).collect();
        let mut means = [0.0; N_STAT_FEATURES];
        let mut stds = [0.0; N_STAT_FEATURES];
        for f in 0..N_STAT_FEATURES {
            let m = rows.iter().map(|r| r[f]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[f] - m) * (r[f] - m)).sum::<f64>() / n;
            means[f] = m;
            stds[f] = v.sqrt();
        }
        Ok(Self { means, stds })
    }

    /// Features with zero spread map to 0.
    pub fn apply(&self, f: &StatFeatures) -> [f64; N_STAT_FEATURES] {
        let raw = f.to_array();
        let mut out = [0.0; N_STAT_FEATURES];
        for i in 0..N_STAT_FEATURES {
            out[i] = if self.stds[i] > 0.0 {
                (raw[i] - self.means[i]) / self.stds[i]
            } else {
                0.0
            };
        }
        out
    }
}

pub fn standardize_features(
    all: &[StatFeatures],
) -> Result<(Vec<[f64; N_STAT_FEATURES]>, Standardizer)> {
    let st = Standardizer::fit(all)?;
    let rows = all.iter().map(|f| st.apply(f)).collect();
    Ok((rows, st))
}

/// Average responsibility of each component over the column's values.
pub fn mean_component_probs(col: &NumericColumn, model: &GmmModel) -> Result<Vec<f64>> {
    if col.values.is_empty() {
        return Err(Error::InvalidArgument(format!("column {} is empty", col.id)));
    }
    let eval = model.evaluator();
    let mut acc = vec![0.0; model.k];
    let mut buf = vec![0.0; model.k];
    for &x in &col.values {
        eval.responsibilities_into(x, &mut buf)?;
        for (a, g) in acc.iter_mut().zip(&buf) {
            *a += g;
        }
    }
    let n = col.values.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Divides by the sum of absolute values. Fails on an all-zero vector.
pub fn l1_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// `[m ‖ f̃] / ‖[m ‖ f̃]‖₁`
pub fn build_signature(mean_probs: &[f64], std_features: &[f64]) -> Result<Vec<f64>> {
    let mut a = Vec::with_capacity(mean_probs.len() + std_features.len());
    a.extend_from_slice(mean_probs);
    a.extend_from_slice(std_features);
    if let Some(v) = a.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite signature entry {v}")));
    }
    l1_normalize(&a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureVector {
    pub id: ColumnId,
    pub mean_probs: Vec<f64>,
    pub std_features: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl SignatureVector {
    /// The mean-responsibility block alone, L1-normalized.
    pub fn distribution_only(&self) -> Result<Vec<f64>> {
        l1_normalize(&self.mean_probs)
    }
}

#[derive(Debug, Clone)]
pub struct Signatures {
    pub rows: Vec<SignatureVector>,
    pub standardizer: Standardizer,
}

/// One signature per column, in corpus order.
pub fn signature_matrix(corpus: &Corpus, model: &GmmModel) -> Result<Vec<SignatureVector>> {
    compute_signatures(corpus, model).map(|s| s.rows)
}

pub fn compute_signatures(corpus: &Corpus, model: &GmmModel) -> Result<Signatures> {
    let per_column = par::try_map(&corpus.columns, |col| {
        Ok((stat_features(col), mean_component_probs(col, model)?))
    })?;
    let stats: Vec<StatFeatures> = per_column.iter().map(|(s, _)| *s).collect();
    let standardizer = Standardizer::fit(&stats)?;
    let rows = corpus
        .columns
        .iter()
        .zip(per_column)
        .map(|(col, (stat, probs))| {
            let std_features = standardizer.apply(&stat).to_vec();
            let normalized = build_signature(&probs, &std_features)?;
            Ok(SignatureVector {
                id: col.id.clone(),
                mean_probs: probs,
                std_features,
                normalized,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Signatures { rows, standardizer })
}
