//! Embedding modes, the corpus-level embedding pipeline, and the embedding
//! JSON-lines format.
//!
//! An embeddings file starts with one `{"meta": …}` line carrying the mode,
//! the responsibility block length (if any) and the run configuration that
//! produced it, followed by one `{"table","column","mode","vector"}` record
//! per column.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{self, BaselineConfig};
use crate::column_store::{ColumnId, Corpus};
use crate::context::{self, HeaderEmbedding};
use crate::error::{Error, Result};
use crate::gmm::{FitConfig, GmmModel};
use crate::signature::{compute_signatures, Signatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// L1-normalized mean responsibilities.
    #[serde(rename = "D")]
    Distribution,
    /// Mean responsibilities plus standardized statistics, L1-normalized.
    #[serde(rename = "D+S")]
    DistributionStats,
    /// `[P ‖ S ‖ f̃]`
    #[serde(rename = "D+S+C-concat")]
    ContextConcat,
    /// `[P ‖ S]`
    #[serde(rename = "D+S+C-concat-ps")]
    ContextConcatShort,
    /// Element-wise mean of zero-padded `P`, `S`, `f̃`.
    #[serde(rename = "D+S+C-agg")]
    ContextAggregate,
    #[serde(rename = "ple")]
    Ple,
    #[serde(rename = "paf")]
    Paf,
    #[serde(rename = "ks")]
    Ks,
    #[serde(rename = "sqgmm")]
    SquashingGmm,
}

impl Mode {
    pub const ALL: [Mode; 9] = [
        Mode::Distribution,
        Mode::DistributionStats,
        Mode::ContextConcat,
        Mode::ContextConcatShort,
        Mode::ContextAggregate,
        Mode::Ple,
        Mode::Paf,
        Mode::Ks,
        Mode::SquashingGmm,
    ];

    pub const BASELINES: [Mode; 4] = [Mode::Ple, Mode::Paf, Mode::Ks, Mode::SquashingGmm];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Distribution => "D",
            Mode::DistributionStats => "D+S",
            Mode::ContextConcat => "D+S+C-concat",
            Mode::ContextConcatShort => "D+S+C-concat-ps",
            Mode::ContextAggregate => "D+S+C-agg",
            Mode::Ple => "ple",
            Mode::Paf => "paf",
            Mode::Ks => "ks",
            Mode::SquashingGmm => "sqgmm",
        }
    }

    /// Whether the mode is built from a fitted Gem model.
    pub fn needs_model(self) -> bool {
        matches!(
            self,
            Mode::Distribution
                | Mode::DistributionStats
                | Mode::ContextConcat
                | Mode::ContextConcatShort
                | Mode::ContextAggregate
        )
    }

    pub fn needs_headers(self) -> bool {
        matches!(
            self,
            Mode::ContextConcat | Mode::ContextConcatShort | Mode::ContextAggregate
        )
    }

    /// Length of the leading mean-responsibility block for a `k`-component
    /// model, if vectors of this mode start with one whose argmax is
    /// meaningful.
    pub fn responsibility_block(self, k: usize) -> Option<usize> {
        matches!(self, Mode::Distribution | Mode::DistributionStats).then_some(k)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!("unknown mode '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedEmbedding {
    pub id: ColumnId,
    pub mode: Mode,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub mode: Mode,
    pub block_len: Option<usize>,
    pub run_config: Option<Value>,
    pub embeddings: Vec<ComposedEmbedding>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_config: Option<Value>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: Meta,
}

#[derive(Serialize, Deserialize)]
struct Record {
    table: String,
    column: String,
    mode: Mode,
    vector: Vec<f64>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.embeddings.iter().map(|e| e.vector.clone()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = MetaLine {
            meta: Meta {
                mode: self.mode,
                block_len: self.block_len,
                run_config: self.run_config.clone(),
            },
        };
        out.push_str(&serde_json::to_string(&meta).expect("serializable meta"));
        out.push('\n');
        for e in &self.embeddings {
            let rec = Record {
                table: e.id.table.clone(),
                column: e.id.column.clone(),
                mode: e.mode,
                vector: e.vector.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable record"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads an embeddings file. The meta line is optional; without it the
    /// mode is taken from the first record. Column indices are assigned
    /// per table in file order.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let artifact = |message: String| Error::Artifact { path: path.to_path_buf(), message };
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut meta: Option<Meta> = None;
        let mut embeddings: Vec<ComposedEmbedding> = Vec::new();
        let mut per_table: std::collections::HashMap<String, usize> = Default::default();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&line)
                .map_err(|e| artifact(format!("line {}: {e}", lineno + 1)))?;
            if value.get("meta").is_some() {
                if meta.is_some() || !embeddings.is_empty() {
                    return Err(artifact(format!("line {}: unexpected meta record", lineno + 1)));
                }
                let m: MetaLine = serde_json::from_value(value)
                    .map_err(|e| artifact(format!("line {}: {e}", lineno + 1)))?;
                meta = Some(m.meta);
                continue;
            }
            let rec: Record = serde_json::from_value(value)
                .map_err(|e| artifact(format!("line {}: {e}", lineno + 1)))?;
            if let Some(first) = embeddings.first() {
                if rec.mode != first.mode {
                    return Err(artifact(format!("line {}: mixed modes", lineno + 1)));
                }
                if rec.vector.len() != first.vector.len() {
                    return Err(Error::DimensionMismatch {
                        expected: first.vector.len(),
                        got: rec.vector.len(),
                    });
                }
            }
            let index = per_table.entry(rec.table.clone()).or_default();
            embeddings.push(ComposedEmbedding {
                id: ColumnId::new(rec.table, rec.column, *index),
                mode: rec.mode,
                vector: rec.vector,
            });
            *index += 1;
        }
        let first_mode = embeddings.first().map(|e| e.mode);
        let (mode, block_len, run_config) = match (meta, first_mode) {
            (Some(m), Some(fm)) if m.mode != fm => {
                return Err(artifact(format!("meta mode {} disagrees with records ({fm})", m.mode)))
            }
            (Some(m), _) => (m.mode, m.block_len, m.run_config),
            (None, Some(fm)) => (fm, None, None),
            (None, None) => return Err(artifact("no embedding records".into())),
        };
        Ok(Self { mode, block_len, run_config, embeddings })
    }
}

/// Where header vectors for the context modes come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum HeaderSource {
    #[default]
    None,
    Provided(Vec<HeaderEmbedding>),
    /// Deterministic hashed token vectors, no external encoder needed.
    Fallback { dim: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbedOptions {
    pub mode: Option<Mode>,
    pub baseline: BaselineConfig,
    /// Used for the squashing-GMM baseline's own mixture fit.
    pub fit: FitConfig,
    pub headers: HeaderSource,
}

fn headers_for(corpus: &Corpus, source: &HeaderSource, mode: Mode) -> Result<Vec<Vec<f64>>> {
    let embs = match source {
        HeaderSource::None => {
            return Err(Error::HeaderEmbedding(format!(
                "mode {mode} needs header embeddings (a headers file or fallback headers)"
            )))
        }
        HeaderSource::Provided(e) => e.clone(),
        HeaderSource::Fallback { dim, seed } => context::fallback_header_embeddings(corpus, *dim, *seed)?,
    };
    if embs.len() != corpus.len() {
        return Err(Error::LengthMismatch { left: corpus.len(), right: embs.len() });
    }
    for (e, col) in embs.iter().zip(&corpus.columns) {
        if e.id.key() != col.id.key() {
            return Err(Error::HeaderEmbedding(format!("header vector for {} is out of order", col.id)));
        }
    }
    embs.iter().map(|e| context::normalize_header(&e.vector)).collect()
}

fn gem_vectors(corpus: &Corpus, sigs: &Signatures, mode: Mode, headers: &HeaderSource) -> Result<Vec<Vec<f64>>> {
    match mode {
        Mode::Distribution => sigs.rows.iter().map(|s| s.distribution_only()).collect(),
        Mode::DistributionStats => Ok(sigs.rows.iter().map(|s| s.normalized.clone()).collect()),
        Mode::ContextConcat | Mode::ContextConcatShort | Mode::ContextAggregate => {
            let hs = headers_for(corpus, headers, mode)?;
            Ok(sigs
                .rows
                .iter()
                .zip(&hs)
                .map(|(sig, h)| match mode {
                    Mode::ContextConcat => context::compose_concat(&sig.normalized, h, Some(&sig.std_features)),
                    Mode::ContextConcatShort => context::compose_concat(&sig.normalized, h, None),
                    _ => context::compose_aggregate(&sig.normalized, h, &sig.std_features),
                })
                .collect())
        }
        _ => unreachable!("baseline modes are handled separately"),
    }
}

/// Embeds every corpus column under `mode`. Gem modes need `model`, fitted
/// on the corpus's pooled stack.
pub fn embed_corpus(corpus: &Corpus, model: Option<&GmmModel>, mode: Mode, opts: &EmbedOptions) -> Result<EmbeddingSet> {
    let (vectors, block_len) = if mode.needs_model() {
        let model = model.ok_or_else(|| Error::InvalidArgument(format!("mode {mode} needs a fitted model")))?;
        let sigs = compute_signatures(corpus, model)?;
        (gem_vectors(corpus, &sigs, mode, &opts.headers)?, mode.responsibility_block(model.k))
    } else {
        opts.baseline.validate()?;
        let vectors = match mode {
            Mode::Ple => baselines::ple_corpus(corpus, opts.baseline.n_bins)?,
            Mode::Paf => baselines::paf_corpus(corpus, opts.baseline.n_frequencies),
            Mode::Ks => baselines::ks_corpus(corpus)?,
            Mode::SquashingGmm => baselines::squashing_gmm_encode(corpus, &opts.baseline, &opts.fit)?.vectors,
            _ => unreachable!("Gem modes are handled above"),
        };
        (vectors, None)
    };
    let embeddings = corpus
        .columns
        .iter()
        .zip(vectors)
        .map(|(col, vector)| ComposedEmbedding { id: col.id.clone(), mode, vector })
        .collect();
    Ok(EmbeddingSet { mode, block_len, run_config: None, embeddings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::column_store::NumericColumn;
    use crate::gmm::fit;

    fn corpus() -> Corpus {
        let mut cols = Vec::new();
        for i in 0..4 {
            let values: Vec<f64> = (0..60).map(|j| (i * 100) as f64 + (j % 13) as f64).collect();
            cols.push(NumericColumn::new(ColumnId::new("t", format!("c{i}"), i), format!("c{i}"), values).unwrap());
        }
        Corpus::new(cols, "mem").unwrap()
    }

    fn model(c: &Corpus) -> GmmModel {
        let cfg = FitConfig { n_components: 4, n_restarts: 2, ..FitConfig::default() };
        fit(&c.pooled_stack(), &cfg).unwrap()
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("D+X".parse::<Mode>().is_err());
    }

    #[test]
    fn vector_lengths_per_mode() {
        let c = corpus();
        let m = model(&c);
        let opts = EmbedOptions {
            headers: HeaderSource::Fallback { dim: 16, seed: 1 },
            ..EmbedOptions::default()
        };
        let expect = [
            (Mode::Distribution, 4),
            (Mode::DistributionStats, 11),
            (Mode::ContextConcat, 11 + 16 + 7),
            (Mode::ContextConcatShort, 11 + 16),
            (Mode::ContextAggregate, 16),
            (Mode::Ple, 50),
            (Mode::Paf, 100),
            (Mode::Ks, 7),
        ];
        for (mode, len) in expect {
            let set = embed_corpus(&c, Some(&m), mode, &opts).unwrap();
            assert_eq!(set.len(), 4);
            assert!(set.embeddings.iter().all(|e| e.vector.len() == len), "{mode}");
        }
    }

    #[test]
    fn context_modes_need_headers_and_gem_modes_need_a_model() {
        let c = corpus();
        let m = model(&c);
        let err = embed_corpus(&c, Some(&m), Mode::ContextConcat, &EmbedOptions::default()).unwrap_err();
        assert!(matches!(err, Error::HeaderEmbedding(_)));
        assert!(embed_corpus(&c, None, Mode::DistributionStats, &EmbedOptions::default()).is_err());
        assert!(embed_corpus(&c, None, Mode::Ks, &EmbedOptions::default()).is_ok());
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let c = corpus();
        let m = model(&c);
        let mut set = embed_corpus(&c, Some(&m), Mode::DistributionStats, &EmbedOptions::default()).unwrap();
        set.run_config = Some(serde_json::json!({"command": "embed", "seed": 42}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        set.write(&path).unwrap();
        let back = EmbeddingSet::read(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.block_len, Some(4));
    }

    #[test]
    fn reader_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "").unwrap();
        assert!(EmbeddingSet::read(&p).is_err());
        fs::write(
            &p,
            "{\"table\":\"t\",\"column\":\"a\",\"mode\":\"ks\",\"vector\":[1.0]}\n{\"table\":\"t\",\"column\":\"b\",\"mode\":\"ks\",\"vector\":[1.0,2.0]}\n",
        )
        .unwrap();
        assert!(matches!(EmbeddingSet::read(&p), Err(Error::DimensionMismatch { .. })));
        fs::write(&p, "{\"table\":\"t\",\"column\":\"a\",\"mode\":\"ks\",\"vector\":[1.0]}\n").unwrap();
        let set = EmbeddingSet::read(&p).unwrap();
        assert_eq!(set.mode, Mode::Ks);
        assert_eq!(set.run_config, None);
    }
}
