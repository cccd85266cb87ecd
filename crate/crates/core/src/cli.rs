//! The `gem` command line: fit, embed, eval, bench, synth and rerun.
//!
//! Every artifact records the arguments that produced it (minus output
//! paths) under `run_config`, and `gem rerun --from ARTIFACT --out PATH`
//! replays them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{BaselineConfig, DEFAULT_BINS, DEFAULT_FREQUENCIES, DEFAULT_PROTOTYPES};
use crate::column_store::{load_corpus, load_ground_truth, Corpus, DEFAULT_NUMERIC_THRESHOLD};
use crate::context::{load_header_embeddings, DEFAULT_HEADER_DIM};
use crate::embedding::{embed_corpus, EmbedOptions, EmbeddingSet, HeaderSource, Mode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Clustering, EvalOptions, EvalReport, KPolicy};
use crate::gmm::{
    fit_with_trace, select_components_bic, FitConfig, GmmModel, DEFAULT_COMPONENTS, DEFAULT_MAX_ITER,
    DEFAULT_RESTARTS, DEFAULT_SEED, DEFAULT_TOL,
};
use crate::synth::{default_spec, generate_recorded, SynthSpec};
use crate::par;

#[derive(Parser, Debug)]
#[command(name = "gem", version, about = "Numeric column embeddings from a pooled Gaussian mixture")]
pub struct Cli {
    /// Cap on worker threads (all cores by default).
    #[arg(long, global = true, value_parser = positive)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the pooled mixture to every numeric column under --input.
    Fit(FitArgs),
    /// Embed every column under one mode.
    Embed(EmbedArgs),
    /// Score embeddings against ground-truth labels.
    Eval(EvalArgs),
    /// Sweep the component count and report D+S macro precision per count.
    Bench(BenchArgs),
    /// Write a seeded synthetic corpus with ground truth.
    Synth(SynthArgs),
    /// Replay the run configuration stored in an artifact.
    Rerun(RerunArgs),
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        Ok(x) => Err(format!("{x} is not a positive finite number")),
        Err(e) => Err(e.to_string()),
    }
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x <= 1.0 => Ok(x),
        Ok(x) => Err(format!("{x} is not in (0, 1]")),
        Err(e) => Err(e.to_string()),
    }
}

/// EM settings shared by every command that fits a mixture.
#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmParams {
    /// Convergence threshold on the change of mean log-likelihood.
    #[arg(long, default_value_t = DEFAULT_TOL, value_parser = positive_f64)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER, value_parser = positive)]
    pub max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_RESTARTS, value_parser = positive)]
    pub restarts: usize,
    #[arg(long, env = "GEM_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Absolute variance floor (default: 1e-6 of the pooled variance).
    #[arg(long, value_parser = positive_f64)]
    pub variance_floor: Option<f64>,
}

impl EmParams {
    pub fn fit_config(&self, n_components: usize) -> FitConfig {
        FitConfig {
            n_components,
            tol: self.tol,
            max_iter: self.max_iter,
            n_restarts: self.restarts,
            seed: self.seed,
            variance_floor: self.variance_floor,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArgs {
    /// Directory of CSV tables.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "model.json")]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COMPONENTS, value_parser = positive)]
    pub components: usize,
    /// Pick the component count by BIC among these (comma separated);
    /// overrides --components.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    #[serde(default)]
    pub bic_candidates: Vec<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub em: EmParams,
    /// Minimum fraction of non-empty cells that must parse as numbers.
    #[arg(long, default_value_t = DEFAULT_NUMERIC_THRESHOLD, value_parser = fraction)]
    pub numeric_threshold: f64,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Fitted model (needed by the D, D+S and D+S+C-* modes).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// D, D+S, D+S+C-concat, D+S+C-concat-ps, D+S+C-agg, ple, paf, ks or sqgmm.
    #[arg(long, default_value = "D+S")]
    pub mode: Mode,
    #[arg(long, default_value = "embeddings.jsonl")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Header-embedding JSON lines for the context modes.
    #[arg(long, conflicts_with = "fallback_headers")]
    pub headers: Option<PathBuf>,
    /// Use built-in hashed header vectors instead of a headers file.
    #[arg(long)]
    pub fallback_headers: bool,
    #[arg(long, default_value_t = DEFAULT_HEADER_DIM, value_parser = positive)]
    pub header_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub header_seed: u64,
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_FREQUENCIES, value_parser = positive)]
    pub frequencies: usize,
    /// Mixture size of the squashing baseline.
    #[arg(long, default_value_t = DEFAULT_PROTOTYPES, value_parser = positive)]
    pub prototypes: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub em: EmParams,
    #[arg(long, default_value_t = DEFAULT_NUMERIC_THRESHOLD, value_parser = fraction)]
    pub numeric_threshold: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusteringArg {
    None,
    Argmax,
    Kmeans,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KPolicyArg {
    SupportMinusOne,
    Support,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// CSV with table,column,label.
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// JSON report.
    #[arg(long, default_value = "report.json")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also write the human-readable table here.
    #[arg(long)]
    #[serde(skip)]
    pub table: Option<PathBuf>,
    /// Also write per-column neighbor lists here (CSV).
    #[arg(long)]
    #[serde(skip)]
    pub neighbors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "support-minus-one")]
    pub k_policy: KPolicyArg,
    #[arg(long, value_enum, default_value = "none")]
    pub clustering: ClusteringArg,
    /// k-means cluster count (default: number of labels).
    #[arg(long, value_parser = positive)]
    pub clusters: Option<usize>,
    #[arg(long, env = "GEM_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Stamp the report with the wall-clock time (makes it non-reproducible).
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Component counts to try (comma separated).
    #[arg(long, value_delimiter = ',', required = true, value_parser = positive)]
    pub candidates: Vec<usize>,
    /// CSV of k,macro_precision; a JSON sidecar with the same stem is written
    /// next to it.
    #[arg(long, default_value = "bench.csv")]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub em: EmParams,
    #[arg(long, default_value_t = DEFAULT_NUMERIC_THRESHOLD, value_parser = fraction)]
    pub numeric_threshold: f64,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthArgs {
    /// JSON spec ({"types": [{label, family, params, columns, rows}]});
    /// a built-in five-type corpus when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, env = "GEM_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = "synth")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RerunArgs {
    /// Any artifact written by gem.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// What gets embedded into artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Fit(FitArgs),
    Embed(EmbedArgs),
    Eval(EvalArgs),
    Bench(BenchArgs),
    Synth(SynthArgs),
}

impl RunConfig {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            RunConfig::Fit(a) => a.out = out,
            RunConfig::Embed(a) => a.out = out,
            RunConfig::Eval(a) => a.out = out,
            RunConfig::Bench(a) => a.out = out,
            RunConfig::Synth(a) => a.out = out,
        }
    }

    /// Reads the configuration recorded in an artifact: a JSON document with
    /// a top-level `run_config`, or an embeddings file whose meta line has
    /// one.
    pub fn from_artifact(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let artifact = |message: String| Error::Artifact { path: path.to_path_buf(), message };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let recorded = match serde_json::from_str::<Value>(&text) {
            Ok(doc) => doc.get("run_config").cloned(),
            Err(_) => EmbeddingSet::read(path)?.run_config,
        };
        let recorded = recorded.ok_or_else(|| artifact("no run_config recorded".into()))?;
        serde_json::from_value(recorded).map_err(|e| artifact(format!("run_config: {e}")))
    }

    pub fn execute(&self) -> Result<()> {
        match self {
            RunConfig::Fit(a) => cmd_fit(a),
            RunConfig::Embed(a) => cmd_embed(a),
            RunConfig::Eval(a) => cmd_eval(a),
            RunConfig::Bench(a) => cmd_bench(a),
            RunConfig::Synth(a) => cmd_synth(a),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        par::set_threads(n)?;
    }
    let config = match cli.command {
        Command::Fit(a) => RunConfig::Fit(a),
        Command::Embed(a) => RunConfig::Embed(a),
        Command::Eval(a) => RunConfig::Eval(a),
        Command::Bench(a) => RunConfig::Bench(a),
        Command::Synth(a) => RunConfig::Synth(a),
        Command::Rerun(a) => {
            let mut config = RunConfig::from_artifact(&a.from)?;
            config.set_out(a.out);
            config
        }
    };
    config.execute()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn fit_model(stack: &[f64], cfg: &FitConfig) -> Result<GmmModel> {
    let outcome = fit_with_trace(stack, cfg)?;
    for run in &outcome.runs {
        println!(
            "restart {:>3}  seed {:>6}  iterations {:>4}  log-likelihood {:.6}{}",
            run.restart,
            run.seed,
            run.log_likelihoods.len() - 1,
            run.log_likelihoods.last().copied().unwrap_or(f64::NAN),
            if run.converged { "" } else { "  (max_iter reached)" }
        );
    }
    println!("kept restart {}", outcome.best_restart);
    Ok(outcome.model)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let corpus = load_corpus(&args.input, args.numeric_threshold)?;
    let stack = corpus.pooled_stack();
    let mut k = args.components;
    if !args.bic_candidates.is_empty() {
        let sel = select_components_bic(&stack, &args.bic_candidates, &args.em.fit_config(1))?;
        for (k, bic) in &sel.scores {
            println!("K = {k:>4}  BIC {bic:.6}");
        }
        println!("BIC selects K = {}", sel.best_k);
        k = sel.best_k;
    }
    let mut model = fit_model(&stack, &args.em.fit_config(k))?;
    model.run_config = Some(RunConfig::Fit(args.clone()).to_value());
    write_text(&args.out, &pretty(&model))?;
    println!("wrote {} (K = {}, {} columns, {} values)", args.out.display(), model.k, corpus.len(), stack.len());
    Ok(())
}

fn header_source(args: &EmbedArgs, corpus: &Corpus) -> Result<HeaderSource> {
    if !args.mode.needs_headers() {
        return Ok(HeaderSource::None);
    }
    match (&args.headers, args.fallback_headers) {
        (Some(file), _) => Ok(HeaderSource::Provided(load_header_embeddings(file, corpus)?)),
        (None, true) => Ok(HeaderSource::Fallback { dim: args.header_dim, seed: args.header_seed }),
        (None, false) => Err(Error::InvalidArgument(format!(
            "mode {} needs --headers FILE or --fallback-headers",
            args.mode
        ))),
    }
}

pub fn cmd_embed(args: &EmbedArgs) -> Result<()> {
    let corpus = load_corpus(&args.input, args.numeric_threshold)?;
    let model = match (&args.model, args.mode.needs_model()) {
        (Some(path), true) => Some(GmmModel::load(path)?),
        (None, true) => return Err(Error::InvalidArgument(format!("mode {} needs --model", args.mode))),
        (_, false) => None,
    };
    let opts = EmbedOptions {
        mode: Some(args.mode),
        baseline: BaselineConfig {
            n_bins: args.bins,
            n_frequencies: args.frequencies,
            n_prototypes: args.prototypes,
            ..BaselineConfig::default()
        },
        fit: args.em.fit_config(args.prototypes),
        headers: header_source(args, &corpus)?,
    };
    let mut set = embed_corpus(&corpus, model.as_ref(), args.mode, &opts)?;
    set.run_config = Some(RunConfig::Embed(args.clone()).to_value());
    write_text(&args.out, &set.to_jsonl())?;
    let dim = set.embeddings.first().map_or(0, |e| e.vector.len());
    println!("wrote {} ({} columns, mode {}, dimension {dim})", args.out.display(), set.len(), set.mode);
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    run_config: Value,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let set = EmbeddingSet::read(&args.embeddings)?;
    let gt = load_ground_truth(&args.ground_truth)?;
    let opts = EvalOptions {
        k_policy: match args.k_policy {
            KPolicyArg::SupportMinusOne => KPolicy::SupportMinusOne,
            KPolicyArg::Support => KPolicy::Support,
        },
        clustering: match args.clustering {
            ClusteringArg::None => Clustering::None,
            ClusteringArg::Argmax => Clustering::Argmax,
            ClusteringArg::Kmeans => Clustering::Kmeans { k: args.clusters, seed: args.seed },
        },
    };
    let mut evaluation = evaluate(&set, &gt, &opts)?;
    if args.timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        evaluation.report.timestamp = Some(format!("unix:{secs}"));
    }
    let table = evaluation.report.to_table();
    print!("{table}");
    let file = ReportFile {
        report: &evaluation.report,
        run_config: RunConfig::Eval(args.clone()).to_value(),
    };
    write_text(&args.out, &pretty(&file))?;
    if let Some(path) = &args.table {
        write_text(path, &table)?;
    }
    if let Some(path) = &args.neighbors {
        write_text(path, &evaluation.neighbors_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    /// max − min macro precision over the candidates.
    pub spread: f64,
}

/// Fits, embeds (D+S) and evaluates once per candidate count, in ascending
/// order of count.
pub fn bench_components(corpus: &Corpus, gt: &crate::GroundTruth, candidates: &[usize], em: &EmParams) -> Result<BenchSummary> {
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no component counts to benchmark".into()));
    }
    let stack = corpus.pooled_stack();
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let model = crate::gmm::fit(&stack, &em.fit_config(k))?;
        let set = embed_corpus(corpus, Some(&model), Mode::DistributionStats, &EmbedOptions::default())?;
        let report = evaluate(&set, gt, &EvalOptions::default())?.report;
        rows.push(BenchRow {
            k,
            macro_precision: report.macro_precision,
            macro_recall: report.macro_recall,
            log_likelihood: model.log_likelihood,
        });
    }
    let max = rows.iter().map(|r| r.macro_precision).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.macro_precision).fold(f64::INFINITY, f64::min);
    Ok(BenchSummary { rows, spread: max - min })
}

#[derive(Serialize)]
struct BenchFile<'a> {
    #[serde(flatten)]
    summary: &'a BenchSummary,
    run_config: Value,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let corpus = load_corpus(&args.input, args.numeric_threshold)?;
    let gt = load_ground_truth(&args.ground_truth)?;
    let summary = bench_components(&corpus, &gt, &args.candidates, &args.em)?;
    let mut csv = String::from("k,macro_precision\n");
    for r in &summary.rows {
        println!("K = {:>4}  macro precision {:.4}", r.k, r.macro_precision);
        csv.push_str(&format!("{},{}\n", r.k, r.macro_precision));
    }
    println!("spread {:.4}", summary.spread);
    write_text(&args.out, &csv)?;
    let file = BenchFile {
        summary: &summary,
        run_config: RunConfig::Bench(args.clone()).to_value(),
    };
    write_text(&args.out.with_extension("json"), &pretty(&file))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => SynthSpec::load(path)?,
        None => default_spec(),
    };
    let record = RunConfig::Synth(args.clone()).to_value();
    let summary = generate_recorded(&spec, args.seed, &args.out, Some(&record))?;
    println!(
        "wrote {} columns in {} tables to {} and labels to {}",
        summary.n_columns,
        summary.n_tables,
        summary.tables_dir.display(),
        summary.ground_truth.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_are_rejected_by_the_parser() {
        assert!(Cli::try_parse_from(["gem", "fit", "--input", "d", "--components", "0"]).is_err());
        assert!(Cli::try_parse_from(["gem", "fit", "--input", "d", "--tol", "-1"]).is_err());
        assert!(Cli::try_parse_from(["gem", "embed", "--input", "d", "--mode", "nope"]).is_err());
        assert!(Cli::try_parse_from(["gem", "bench", "--input", "d", "--ground-truth", "g"]).is_err());
        assert!(Cli::try_parse_from([
            "gem", "embed", "--input", "d", "--headers", "h", "--fallback-headers"
        ])
        .is_err());
        assert!(Cli::try_parse_from(["gem", "fit", "--input", "d", "--components", "50", "--tol", "1e-3", "--restarts", "10", "--seed", "7"]).is_ok());
    }

    #[test]
    fn run_config_round_trips_without_output_paths() {
        let cli = Cli::try_parse_from([
            "gem", "bench", "--input", "in", "--ground-truth", "gt.csv", "--candidates", "50,5", "--out", "x.csv",
        ])
        .unwrap();
        let Command::Bench(args) = cli.command else { panic!("bench expected") };
        let value = RunConfig::Bench(args.clone()).to_value();
        assert_eq!(value["command"], "bench");
        assert!(value.get("out").is_none());
        let back: RunConfig = serde_json::from_value(value).unwrap();
        let RunConfig::Bench(back) = back else { panic!("bench expected") };
        assert_eq!(back.candidates, vec![50, 5]);
        assert_eq!(back.em, args.em);
        assert_eq!(back.out, PathBuf::new());
    }

    #[test]
    fn modes_parse_from_the_command_line() {
        for m in Mode::ALL {
            let cli = Cli::try_parse_from(["gem", "embed", "--input", "d", "--mode", m.name()]).unwrap();
            let Command::Embed(a) = cli.command else { panic!("embed expected") };
            assert_eq!(a.mode, m);
        }
    }
}
