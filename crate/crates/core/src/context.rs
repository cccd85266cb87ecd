//! Header embeddings and their composition with value signatures.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::column_store::{ColumnId, Corpus};
use crate::error::{Error, Result};
use crate::signature::l1_normalize;

pub const DEFAULT_HEADER_DIM: usize = 384;

/// One line of the header-embedding JSONL file shared with external encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub table: String,
    pub column: String,
    pub header: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeaderEmbedding {
    pub id: ColumnId,
    pub header: String,
    pub vector: Vec<f64>,
}

/// Reads header vectors and aligns them with the corpus. Every corpus column
/// needs exactly one record; records for unknown columns are ignored.
pub fn load_header_embeddings(file: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<HeaderEmbedding>> {
    let file = file.as_ref();
    let reader = std::io::BufReader::new(std::fs::File::open(file).map_err(|e| Error::io(file, e))?);
    let mut by_key: HashMap<(String, String), HeaderRecord> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: HeaderRecord = serde_json::from_str(&line).map_err(|e| {
            Error::HeaderEmbedding(format!("{}: line {}: {e}", file.display(), lineno + 1))
        })?;
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::HeaderEmbedding(format!(
                "{}.{}: non-finite vector entry",
                rec.table, rec.column
            )));
        }
        match dim {
            None => dim = Some(rec.vector.len()),
            Some(d) if d != rec.vector.len() => {
                return Err(Error::HeaderEmbedding(format!(
                    "{}.{}: dimension {} differs from {d}",
                    rec.table,
                    rec.column,
                    rec.vector.len()
                )))
            }
            _ => {}
        }
        let key = (rec.table.clone(), rec.column.clone());
        if by_key.contains_key(&key) {
            return Err(Error::HeaderEmbedding(format!(
                "{}.{}: duplicate record",
                rec.table, rec.column
            )));
        }
        by_key.insert(key, rec);
    }
    corpus
        .columns
        .iter()
        .map(|c| {
            let rec = by_key
                .remove(&(c.id.table.clone(), c.id.column.clone()))
                .ok_or_else(|| Error::HeaderEmbedding(format!("no vector for column {}", c.id)))?;
            Ok(HeaderEmbedding {
                id: c.id.clone(),
                header: rec.header,
                vector: rec.vector,
            })
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn tokens(header: &str) -> Vec<String> {
    let toks: Vec<String> = header
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if toks.is_empty() {
        vec![String::new()]
    } else {
        toks
    }
}

/// Deterministic stand-in for a sentence encoder: every lowercase token seeds
/// a Gaussian random unit vector; the header vector is the L2-normalized sum.
pub fn fallback_header_embed(header: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < 8 {
        return Err(Error::InvalidArgument(format!("header dimension must be ≥ 8, got {dim}")));
    }
    let mut acc = vec![0.0; dim];
    for tok in tokens(header) {
        let token_seed = fnv1a(tok.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(token_seed);
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x / norm;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for a in &mut acc {
            *a /= norm;
        }
    }
    Ok(acc)
}

pub fn fallback_header_embeddings(corpus: &Corpus, dim: usize, seed: u64) -> Result<Vec<HeaderEmbedding>> {
    corpus
        .columns
        .iter()
        .map(|c| {
            Ok(HeaderEmbedding {
                id: c.id.clone(),
                header: c.header.clone(),
                vector: fallback_header_embed(&c.header, dim, seed)?,
            })
        })
        .collect()
}

/// `s / ‖s‖₁`
pub fn normalize_header(s: &[f64]) -> Result<Vec<f64>> {
    l1_normalize(s)
}

/// Plain concatenation `[P ‖ S]` or `[P ‖ S ‖ f̃]`, no re-normalization.
pub fn compose_concat(p: &[f64], s: &[f64], std_features: Option<&[f64]>) -> Vec<f64> {
    let extra = std_features.map_or(0, <[f64]>::len);
    let mut out = Vec::with_capacity(p.len() + s.len() + extra);
    out.extend_from_slice(p);
    out.extend_from_slice(s);
    if let Some(f) = std_features {
        out.extend_from_slice(f);
    }
    out
}

/// Zero-pads the three parts to a common length and averages them.
pub fn compose_aggregate(p: &[f64], s: &[f64], std_features: &[f64]) -> Vec<f64> {
    let d = p.len().max(s.len()).max(std_features.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    (0..d)
        .map(|i| (at(p, i) + at(s, i) + at(std_features, i)) / 3.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::column_store::NumericColumn;
    use approx::assert_abs_diff_eq;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    fn corpus2() -> Corpus {
        Corpus::new(
            vec![
                NumericColumn::new(ColumnId::new("t", "age", 0), "age", vec![1.0]).unwrap(),
                NumericColumn::new(ColumnId::new("t", "year", 1), "year", vec![2.0]).unwrap(),
            ],
            "mem",
        )
        .unwrap()
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), lines.join("\n")).unwrap();
        f
    }

    fn rec(column: &str, v: Vec<f64>) -> String {
        serde_json::to_string(&HeaderRecord {
            table: "t".into(),
            column: column.into(),
            header: column.into(),
            vector: v,
        })
        .unwrap()
    }

    #[test]
    fn loads_one_vector_per_column() {
        let f = write_lines(&[rec("year", vec![0.0, 1.0]), rec("age", vec![1.0, 0.0]), rec("other", vec![3.0, 3.0])]);
        let embs = load_header_embeddings(f.path(), &corpus2()).unwrap();
        assert_eq!(embs.len(), 2);
        assert_eq!(embs[0].id.column, "age");
        assert_eq!(embs[0].vector, vec![1.0, 0.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let f = write_lines(&[rec("age", vec![1.0, 0.0])]);
        let err = load_header_embeddings(f.path(), &corpus2()).unwrap_err();
        assert!(err.to_string().contains("t.year"), "{err}");
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let f = write_lines(&[rec("age", vec![0.5; 384]), rec("year", vec![0.5; 768])]);
        let err = load_header_embeddings(f.path(), &corpus2()).unwrap_err();
        assert!(err.to_string().contains("dimension"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_records_are_rejected() {
        let f = write_lines(&[rec("age", vec![1.0]), rec("age", vec![1.0]), rec("year", vec![1.0])]);
        assert!(load_header_embeddings(f.path(), &corpus2()).is_err());
        let f = write_lines(&["{\"table\":\"t\"}".to_string()]);
        assert!(load_header_embeddings(f.path(), &corpus2()).is_err());
    }

    #[test]
    fn fallback_is_deterministic_and_case_folded() {
        let a = fallback_header_embed("age", 384, 1).unwrap();
        let b = fallback_header_embed("age", 384, 1).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(cosine(&a, &b), 1.0, epsilon = 1e-12);
        let c = fallback_header_embed("Age", 384, 1).unwrap();
        assert_eq!(a, c);
        assert_abs_diff_eq!(a.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_ne!(a, fallback_header_embed("age", 384, 2).unwrap());
    }

    #[test]
    fn fallback_unrelated_headers_are_nearly_orthogonal() {
        let p = fallback_header_embed("price", 384, 0).unwrap();
        let z = fallback_header_embed("zebra", 384, 0).unwrap();
        assert!(cosine(&p, &z).abs() < 0.2);
        // Concentration check across many disjoint pairs.
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            let a = fallback_header_embed(&format!("left{i}"), 384, 0).unwrap();
            let b = fallback_header_embed(&format!("right{i}"), 384, 0).unwrap();
            worst = worst.max(cosine(&a, &b).abs());
        }
        assert!(worst < 0.25, "worst |cos| = {worst}");
    }

    #[test]
    fn fallback_shares_tokens() {
        let a = fallback_header_embed("engine_power", 64, 0).unwrap();
        let b = fallback_header_embed("battery power", 64, 0).unwrap();
        assert!(cosine(&a, &b) > 0.3);
        let empty = fallback_header_embed("", 64, 0).unwrap();
        assert_eq!(empty, fallback_header_embed("--", 64, 0).unwrap());
        assert!(fallback_header_embed("x", 4, 0).is_err());
    }

    #[test]
    fn header_normalization() {
        assert_eq!(normalize_header(&[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize_header(&[1.0, -1.0]).unwrap(), vec![0.5, -0.5]);
        assert!(normalize_header(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn concat_examples() {
        assert_eq!(compose_concat(&[0.5, 0.5], &[1.0, 0.0], None), vec![0.5, 0.5, 1.0, 0.0]);
        assert_eq!(
            compose_concat(&[0.5, 0.5], &[1.0, 0.0], Some(&[0.0])),
            vec![0.5, 0.5, 1.0, 0.0, 0.0]
        );
        let p = [0.1, 0.2, 0.3];
        let s = [0.4; 5];
        let f = [0.9; 7];
        let out = compose_concat(&p, &s, Some(&f));
        assert_eq!(out.len(), 3 + 5 + 7);
        assert_eq!(&out[..3], &p);
        assert_eq!(&out[3..8], &s);
        assert_eq!(&out[8..], &f);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(compose_aggregate(&[1.0], &[1.0], &[1.0]), vec![1.0]);
        assert_eq!(compose_aggregate(&[2.0, 0.0], &[0.0, 2.0], &[0.0, 0.0]), vec![2.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(compose_aggregate(&[1.0; 9], &[1.0; 4], &[1.0; 7]).len(), 9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_header_has_unit_l1_norm(v in proptest::collection::vec(-5.0f64..5.0, 1..400)) {
                prop_assume!(v.iter().any(|x| *x != 0.0));
                let s = normalize_header(&v).unwrap();
                prop_assert!((s.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
