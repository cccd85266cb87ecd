//! Evaluation protocol: cosine neighbors, precision/recall@k per semantic
//! type, and clustering agreement (ACC, ARI).
//!
//! For a column whose label has support `s`, the neighborhood size is
//! `k = s − 1` (the column itself is excluded from its own neighbors), which
//! makes per-column precision and recall coincide. [`KPolicy::Support`]
//! switches to `k = s`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::column_store::{ColumnId, GroundTruth};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::par;

pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub ids: Vec<ColumnId>,
    pub scores: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn new(ids: Vec<ColumnId>, vectors: &[Vec<f64>]) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: vectors.len(),
            });
        }
        Ok(Self {
            ids,
            scores: cosine_matrix(vectors)?,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pairwise cosine similarities. Zero vectors score 0 against everything,
/// and every diagonal entry is 1.
pub fn cosine_matrix(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = vectors.first() else {
        return Ok(Vec::new());
    };
    let dim = first.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    let norms: Vec<f64> = vectors.iter().map(|v| norm(v)).collect();
    if norms.iter().all(|n| *n == 0.0) {
        return Err(Error::InvalidArgument("every embedding is the zero vector".into()));
    }
    Ok(par::map_range(vectors.len(), |i| {
        (0..vectors.len())
            .map(|j| {
                if i == j {
                    1.0
                } else if norms[i] == 0.0 || norms[j] == 0.0 {
                    0.0
                } else {
                    let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                    dot / (norms[i] * norms[j])
                }
            })
            .collect()
    }))
}

/// The `k` most similar other columns; ties go to the lower index.
pub fn topk_neighbors(sim: &SimilarityMatrix, i: usize, k: usize) -> Result<Vec<usize>> {
    let n = sim.len();
    if i >= n {
        return Err(Error::InvalidArgument(format!("column index {i} out of range")));
    }
    if k == 0 || k + 1 > n {
        return Err(Error::KOutOfRange {
            k,
            max: n.saturating_sub(1),
        });
    }
    let row = &sim.scores[i];
    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    // Numeric comparison so that −0.0 and 0.0 tie; scores are never NaN.
    others.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    others.truncate(k);
    Ok(others)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    /// `k = support − 1`
    #[default]
    SupportMinusOne,
    /// `k = support`, capped at `n − 1`
    Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnResult {
    pub index: usize,
    pub label: String,
    pub k: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub k_policy: KPolicy,
    pub n_columns: usize,
    pub n_labeled: usize,
    pub per_type: BTreeMap<String, TypeMetrics>,
    /// Labels with support 1, excluded from the macro averages.
    pub skipped: Vec<String>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub acc: Option<f64>,
    pub ari: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let width = self.per_type.keys().map(String::len).max().unwrap_or(4).max(5);
        let _ = writeln!(s, "mode: {}  columns: {}  labeled: {}", self.mode, self.n_columns, self.n_labeled);
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>7}", "label", "precision", "recall", "support");
        for (label, m) in &self.per_type {
            let _ = writeln!(s, "{label:<width$}  {:>9.4}  {:>9.4}  {:>7}", m.precision, m.recall, m.support);
        }
        let _ = writeln!(s, "{:<width$}  {:>9.4}  {:>9.4}", "macro", self.macro_precision, self.macro_recall);
        if !self.skipped.is_empty() {
            let _ = writeln!(s, "skipped (support 1): {}", self.skipped.join(", "));
        }
        if let Some(acc) = self.acc {
            let _ = writeln!(s, "ACC: {acc:.4}");
        }
        if let Some(ari) = self.ari {
            let _ = writeln!(s, "ARI: {ari:.4}");
        }
        s
    }
}

/// Per-column neighbor results for every labeled column whose label has
/// support ≥ 2.
pub fn column_results(
    sim: &SimilarityMatrix,
    labels: &[Option<String>],
    policy: KPolicy,
) -> Result<Vec<ColumnResult>> {
    let n = sim.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    let mut support: HashMap<&str, usize> = HashMap::new();
    for l in labels.iter().flatten() {
        *support.entry(l.as_str()).or_default() += 1;
    }
    let mut out = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let Some(label) = label else { continue };
        let s = support[label.as_str()];
        if s < 2 {
            continue;
        }
        let k = match policy {
            KPolicy::SupportMinusOne => s - 1,
            KPolicy::Support => s.min(n - 1),
        };
        let neighbors = topk_neighbors(sim, i, k)?;
        let tp = neighbors
            .iter()
            .filter(|&&j| labels[j].as_deref() == Some(label.as_str()))
            .count();
        out.push(ColumnResult {
            index: i,
            label: label.clone(),
            k,
            true_positives: tp,
            precision: tp as f64 / k as f64,
            recall: tp as f64 / (s - 1) as f64,
            neighbors,
        });
    }
    Ok(out)
}

fn aggregate(
    columns: &[ColumnResult],
    labels: &[Option<String>],
    policy: KPolicy,
    mode: &str,
) -> Result<EvalReport> {
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels.iter().flatten() {
        *support.entry(l.as_str()).or_default() += 1;
    }
    if support.is_empty() {
        return Err(Error::GroundTruth("no labeled columns to evaluate".into()));
    }
    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for c in columns {
        let e = sums.entry(c.label.as_str()).or_default();
        e.0 += c.precision;
        e.1 += c.recall;
    }
    let mut per_type = BTreeMap::new();
    let mut skipped = Vec::new();
    for (label, &s) in &support {
        if s < 2 {
            skipped.push(label.to_string());
            continue;
        }
        let (p, r) = sums[label];
        per_type.insert(
            label.to_string(),
            TypeMetrics {
                precision: p / s as f64,
                recall: r / s as f64,
                support: s,
            },
        );
    }
    let t = per_type.len() as f64;
    let (macro_precision, macro_recall) = if per_type.is_empty() {
        (0.0, 0.0)
    } else {
        (
            per_type.values().map(|m| m.precision).sum::<f64>() / t,
            per_type.values().map(|m| m.recall).sum::<f64>() / t,
        )
    };
    Ok(EvalReport {
        mode: mode.to_string(),
        k_policy: policy,
        n_columns: labels.len(),
        n_labeled: labels.iter().flatten().count(),
        per_type,
        skipped,
        macro_precision,
        macro_recall,
        acc: None,
        ari: None,
        timestamp: None,
    })
}

/// Per-type and macro precision/recall@k. Unlabeled columns still take part
/// as (irrelevant) neighbors.
pub fn precision_recall_at_k(
    sim: &SimilarityMatrix,
    labels: &[Option<String>],
    policy: KPolicy,
) -> Result<EvalReport> {
    let columns = column_results(sim, labels, policy)?;
    aggregate(&columns, labels, policy, "")
}

// ---------------------------------------------------------------- clustering

/// Index of the largest entry among the first `block_len` of each vector;
/// ties go to the lowest index.
pub fn assign_clusters_argmax(vectors: &[Vec<f64>], block_len: usize) -> Result<Vec<usize>> {
    vectors
        .iter()
        .map(|v| {
            if block_len == 0 || v.len() < block_len {
                return Err(Error::DimensionMismatch {
                    expected: block_len,
                    got: v.len(),
                });
            }
            let mut best = 0;
            for j in 1..block_len {
                if v[j] > v[best] {
                    best = j;
                }
            }
            Ok(best)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding.
pub fn kmeans_clusters(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, max: n });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if r < *d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(assign)
}

/// Maps arbitrary labels to dense indices in first-seen order.
pub fn encode_labels<T: std::hash::Hash + Eq>(labels: &[T]) -> Vec<usize> {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<usize>>, usize, usize) {
    let p = encode_labels(pred);
    let t = encode_labels(truth);
    let rows = p.iter().max().map_or(0, |m| m + 1);
    let cols = t.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; cols]; rows];
    for (a, b) in p.iter().zip(&t) {
        table[*a][*b] += 1;
    }
    (table, rows, cols)
}

/// Fraction of items matched under the best one-to-one cluster↔label pairing.
pub fn clustering_acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("ACC of an empty labeling".into()));
    }
    let (table, rows, cols) = contingency(pred, truth);
    // kuhn_munkres needs rows ≤ columns.
    let weights: Vec<Vec<i64>> = if rows <= cols {
        table.iter().map(|r| r.iter().map(|&c| c as i64).collect()).collect()
    } else {
        (0..cols).map(|j| (0..rows).map(|i| table[i][j] as i64).collect()).collect()
    };
    let matrix = Matrix::from_rows(weights).expect("rectangular contingency table");
    let (matched, _) = kuhn_munkres(&matrix);
    Ok(matched as f64 / pred.len() as f64)
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand Index. When the expected and maximum indices coincide
/// (e.g. both labelings are a single cluster) the result is 1.
pub fn adjusted_rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::InvalidArgument("ARI needs at least two items".into()));
    }
    let (table, _, _) = contingency(pred, truth);
    let index: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let a: f64 = table.iter().map(|r| comb2(r.iter().sum())).sum();
    let cols = table.first().map_or(0, Vec::len);
    let b: f64 = (0..cols).map(|j| comb2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = a * b / comb2(n);
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

// ---------------------------------------------------------------- end to end

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Clustering {
    #[default]
    None,
    Argmax,
    Kmeans {
        k: Option<usize>,
        seed: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k_policy: KPolicy,
    pub clustering: Clustering,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub columns: Vec<ColumnResult>,
    pub ids: Vec<ColumnId>,
}

impl Evaluation {
    /// `table,column,label,k,true_positives,precision,neighbors` with
    /// neighbors as `table.column` joined by `;`.
    pub fn neighbors_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["table", "column", "label", "k", "true_positives", "precision", "neighbors"])
            .expect("in-memory write");
        for c in &self.columns {
            let id = &self.ids[c.index];
            let neighbors: Vec<String> = c.neighbors.iter().map(|&j| self.ids[j].to_string()).collect();
            w.write_record([
                id.table.clone(),
                id.column.clone(),
                c.label.clone(),
                c.k.to_string(),
                c.true_positives.to_string(),
                c.precision.to_string(),
                neighbors.join(";"),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

pub fn evaluate(set: &EmbeddingSet, gt: &GroundTruth, opts: &EvalOptions) -> Result<Evaluation> {
    if gt.is_empty() {
        return Err(Error::GroundTruth("ground truth is empty".into()));
    }
    let ids: Vec<ColumnId> = set.embeddings.iter().map(|e| e.id.clone()).collect();
    gt.check_covered(&ids)?;
    let labels = gt.aligned(&ids);
    let vectors: Vec<Vec<f64>> = set.embeddings.iter().map(|e| e.vector.clone()).collect();
    let sim = SimilarityMatrix::new(ids.clone(), &vectors)?;
    let columns = column_results(&sim, &labels, opts.k_policy)?;
    let mut report = aggregate(&columns, &labels, opts.k_policy, set.mode.name())?;

    let pred = match opts.clustering {
        Clustering::None => None,
        Clustering::Argmax => {
            let block = set
                .block_len
                .ok_or_else(|| Error::NoResponsibilityBlock(set.mode.name().to_string()))?;
            Some(assign_clusters_argmax(&vectors, block)?)
        }
        Clustering::Kmeans { k, seed } => {
            let n_types = labels.iter().flatten().collect::<std::collections::HashSet<_>>().len();
            Some(kmeans_clusters(&vectors, k.unwrap_or(n_types).max(1), seed)?)
        }
    };
    if let Some(pred) = pred {
        let (p, t): (Vec<usize>, Vec<&String>) = pred
            .iter()
            .zip(&labels)
            .filter_map(|(p, l)| l.as_ref().map(|l| (*p, l)))
            .unzip();
        let t = encode_labels(&t);
        report.acc = Some(clustering_acc(&p, &t)?);
        report.ari = if p.len() >= 2 { Some(adjusted_rand_index(&p, &t)?) } else { None };
    }
    Ok(Evaluation { report, columns, ids })
}
