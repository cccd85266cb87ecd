//! Seeded synthetic corpora: each semantic type draws its columns from one
//! parametric family.
//!
//! Output layout under the target directory:
//! - `tables/table_NNN.csv`, where table `j` holds the `j`-th column of every
//!   type that has one (shorter columns leave trailing cells empty);
//! - `ground_truth.csv` with `table,column,label`;
//! - `synth.json` with the spec and seed that produced the files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::column_store::GroundTruth;
use crate::error::{Error, Result};

pub const FAMILIES: [&str; 6] = ["normal", "uniform", "exponential", "lognormal", "gamma", "beta"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub label: String,
    pub family: String,
    /// normal: mean, std; uniform: low, high; exponential: rate;
    /// lognormal: mu, sigma; gamma: shape, scale; beta: alpha, beta.
    pub params: Vec<f64>,
    pub columns: usize,
    pub rows: usize,
    /// Column header; defaults to the label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub types: Vec<TypeSpec>,
}

impl TypeSpec {
    pub fn new(label: &str, family: &str, params: &[f64], columns: usize, rows: usize) -> Self {
        Self {
            label: label.into(),
            family: family.into(),
            params: params.to_vec(),
            columns,
            rows,
            header: None,
        }
    }

    pub fn header(&self) -> &str {
        self.header.as_deref().unwrap_or(&self.label)
    }
}

/// Five types with pairwise KS distance above 0.99 between their
/// distributions, 20 columns of 500 rows each.
pub fn default_spec() -> SynthSpec {
    SynthSpec {
        types: vec![
            TypeSpec::new("age", "normal", &[40.0, 8.0], 20, 500),
            TypeSpec::new("year", "uniform", &[1950.0, 2020.0], 20, 500),
            TypeSpec::new("price", "lognormal", &[9.0, 0.4], 20, 500),
            TypeSpec::new("ratio", "beta", &[2.0, 5.0], 20, 500),
            TypeSpec::new("count", "gamma", &[9.0, 20.0], 20, 500),
        ],
    }
}

pub enum Sampler {
    Normal(Normal<f64>),
    Uniform(Uniform<f64>),
    Exponential(Exp<f64>),
    LogNormal(LogNormal<f64>),
    Gamma(Gamma<f64>),
    Beta(Beta<f64>),
}

impl Sampler {
    pub fn new(family: &str, params: &[f64]) -> Result<Self> {
        let want = match family {
            "exponential" => 1,
            f if FAMILIES.contains(&f) => 2,
            other => return Err(Error::UnknownFamily(other.to_string())),
        };
        if params.len() != want || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{family} takes {want} finite parameter(s), got {params:?}"
            )));
        }
        if matches!(family, "normal" | "lognormal") && !(params[1] > 0.0) {
            return Err(Error::InvalidArgument(format!("{family} needs a positive spread, got {}", params[1])));
        }
        let bad = |e: &dyn std::fmt::Display| Error::InvalidArgument(format!("{family}{params:?}: {e}"));
        Ok(match family {
            "normal" => Sampler::Normal(Normal::new(params[0], params[1]).map_err(|e| bad(&e))?),
            "uniform" => Sampler::Uniform(Uniform::new(params[0], params[1]).map_err(|e| bad(&e))?),
            "exponential" => Sampler::Exponential(Exp::new(params[0]).map_err(|e| bad(&e))?),
            "lognormal" => Sampler::LogNormal(LogNormal::new(params[0], params[1]).map_err(|e| bad(&e))?),
            "gamma" => Sampler::Gamma(Gamma::new(params[0], params[1]).map_err(|e| bad(&e))?),
            _ => Sampler::Beta(Beta::new(params[0], params[1]).map_err(|e| bad(&e))?),
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Exponential(d) => d.sample(rng),
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Beta(d) => d.sample(rng),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::InvalidArgument("synthetic spec lists no types".into()));
        }
        let mut labels = std::collections::HashSet::new();
        for t in &self.types {
            Sampler::new(&t.family, &t.params)?;
            if t.columns == 0 || t.rows == 0 {
                return Err(Error::InvalidArgument(format!("type {} needs columns and rows ≥ 1", t.label)));
            }
            if !labels.insert(t.label.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate type label {}", t.label)));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Values of column `column` of type `type_index`. Every column has its own
/// RNG stream, so columns do not depend on each other or on spec order of
/// other types' sizes.
pub fn sample_column(spec: &TypeSpec, type_index: usize, column: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = Sampler::new(&spec.family, &spec.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((type_index as u64) << 32) | column as u64);
    Ok((0..spec.rows).map(|_| sampler.sample(&mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub tables_dir: PathBuf,
    pub ground_truth: PathBuf,
    pub n_tables: usize,
    pub n_columns: usize,
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    seed: u64,
    spec: &'a SynthSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    run_config: Option<&'a serde_json::Value>,
}

pub fn table_name(j: usize) -> String {
    format!("table_{j:03}")
}

/// Writes the corpus, ground truth and provenance record under `out_dir`.
pub fn generate(spec: &SynthSpec, seed: u64, out_dir: impl AsRef<Path>) -> Result<SynthSummary> {
    generate_recorded(spec, seed, out_dir, None)
}

/// Like [`generate`], additionally storing `run_config` in `synth.json`.
pub fn generate_recorded(
    spec: &SynthSpec,
    seed: u64,
    out_dir: impl AsRef<Path>,
    run_config: Option<&serde_json::Value>,
) -> Result<SynthSummary> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let tables_dir = out_dir.join("tables");
    fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;

    let n_tables = spec.types.iter().map(|t| t.columns).max().unwrap_or(0);
    let mut gt = GroundTruth::default();
    let mut n_columns = 0;
    for j in 0..n_tables {
        let table = table_name(j);
        let members: Vec<(usize, &TypeSpec)> =
            spec.types.iter().enumerate().filter(|(_, t)| t.columns > j).collect();
        let mut headers = Vec::with_capacity(members.len());
        let mut columns = Vec::with_capacity(members.len());
        for (ti, t) in &members {
            let mut header = t.header().to_string();
            if headers.contains(&header) {
                header = format!("{header}_{ti}");
            }
            gt.insert(&table, &header, &t.label)?;
            headers.push(header);
            columns.push(sample_column(t, *ti, j, seed)?);
        }
        n_columns += columns.len();
        let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
        let path = tables_dir.join(format!("{table}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(&headers).map_err(|e| csv_error(&path, e))?;
        for r in 0..rows {
            let cells = columns.iter().map(|c| c.get(r).map(|v| v.to_string()).unwrap_or_default());
            w.write_record(cells).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let gt_path = out_dir.join("ground_truth.csv");
    gt.write(&gt_path)?;
    let record_path = out_dir.join("synth.json");
    let mut record = serde_json::to_string_pretty(&SynthRecord { seed, spec, run_config }).expect("serializable spec");
    record.push('\n');
    fs::write(&record_path, record).map_err(|e| Error::io(&record_path, e))?;
    Ok(SynthSummary {
        tables_dir,
        ground_truth: gt_path,
        n_tables,
        n_columns,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        file: path.to_path_buf(),
        row: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}
