//! Command-line front end. Every command loads and validates the whole
//! configuration first and writes its outputs only after all computation has
//! succeeded, so a failed run leaves no partial files behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::aggregator::ScoreMode;
use crate::backend::{FileBackend, HttpBackend, HttpBackendOptions, LogitBackend};
use crate::config::{ConfigError, Overrides, Requirement, RunConfig};
use crate::eval::{
    summarize_runs, write_report, write_sweep_csv, EvalError, Evaluation, Pipeline,
    PredictionRecord, RunSummary, SweepRow,
};
use crate::prompting::{parse_template, TemplateError};
use crate::tensorio::{
    read_dataset, read_embeddings, read_tensor, read_vocab, verify_export_manifest, write_tensor,
    DatasetRecord, EmbeddingMatrix, TensorIoError, Vocabulary,
};
use crate::verbalizer::whitening::fit_on_vocabulary;
use crate::verbalizer::{
    build_verbalizer, fit_whitening, KeywordResolution, LabelIndex, LabelSpec, SimilarityMetric,
    SubwordSplits, VerbalizerDump, VerbalizerError, WeightScheme, WhiteningTransform,
};

#[derive(Debug, Parser)]
#[command(name = "npprompt", version, about = "Zero-shot text classification with nearest-neighbor label words")]
pub struct Cli {
    /// Run configuration (JSON); relative paths are resolved against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Label words per keyword.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Similarity metric: cosine, neg_euclidean or dot.
    #[arg(long, global = true)]
    pub metric: Option<SimilarityMetric>,
    /// Weight scheme: softmax, uniform or normalized_similarity.
    #[arg(long, global = true)]
    pub weights: Option<WeightScheme>,
    /// Aggregation: sum_logit or sum_prob.
    #[arg(long, global = true)]
    pub mode: Option<ScoreMode>,
    /// Output file or directory (depends on the command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Maximum concurrent backend requests.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Score through a running service instead of exported logits.
    #[arg(long, global = true)]
    pub backend_url: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Show the label words chosen for each keyword.
    Neighbors {
        /// Inspect these keywords instead of the configured classes.
        #[arg(long)]
        keyword: Vec<String>,
    },
    /// Predict a class for every dataset record (JSONL to --out or stdout).
    Classify,
    /// Score a labeled dataset and write report.json, report.txt and predictions.jsonl into --out.
    Eval,
    /// Metric for every k in [k-min, k-max], as CSV written to --out.
    Sweep {
        #[arg(long, default_value_t = 1)]
        k_min: usize,
        #[arg(long)]
        k_max: usize,
    },
    /// Fit a whitening transform on a contextual embedding table.
    WhitenFit {
        /// Contextual embeddings; defaults to `whitening.contextual` from the config.
        #[arg(long)]
        contextual: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Backend(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<TensorIoError> for CliError {
    fn from(e: TensorIoError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<VerbalizerError> for CliError {
    fn from(e: VerbalizerError) -> Self {
        match e {
            VerbalizerError::UnresolvableLabel(_)
            | VerbalizerError::InvalidK { .. }
            | VerbalizerError::EmptyKeywords(_)
            | VerbalizerError::DegenerateWeights(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Verbalizer(v) => v.into(),
            EvalError::Backend(b) => Self::Backend(b.to_string()),
            EvalError::Template(TemplateError::ShapeMismatch { .. }) => Self::Data(e.to_string()),
            EvalError::Template(_) | EvalError::NoClasses(_) | EvalError::InvalidK(_) => {
                Self::Config(e.to_string())
            }
            _ => Self::Data(e.to_string()),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        k: cli.k,
        metric: cli.metric,
        weights: cli.weights,
        mode: cli.mode,
        parallel: cli.parallel,
        backend_url: cli.backend_url.clone(),
    }
}

/// A configuration as written (for echoing) and with resolved paths.
pub struct LoadedConfig {
    pub raw: RunConfig,
    pub resolved: RunConfig,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<LoadedConfig> {
    let mut raw = RunConfig::load(path)?;
    raw.apply(overrides);
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolved = raw.resolved(base);
    Ok(LoadedConfig { raw, resolved })
}

/// Vocabulary, the embedding space label words are searched in, and optional
/// subword splits.
pub struct Space {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub splits: Option<SubwordSplits>,
    pub resolution: KeywordResolution,
}

impl Space {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        for manifest in &cfg.export_manifests {
            verify_export_manifest(manifest)?;
        }
        let vocab_path = cfg.vocab.as_ref().ok_or(ConfigError::Missing("vocab"))?;
        let vocab = read_vocab(vocab_path)?;
        let embeddings = match &cfg.whitening {
            None => {
                let path = cfg.embeddings.as_ref().ok_or(ConfigError::Missing("embeddings"))?;
                read_embeddings(path, &vocab)?
            }
            Some(w) => {
                let contextual = read_embeddings(&w.contextual, &vocab)?;
                let transform = match &w.transform {
                    Some(p) => WhiteningTransform::from_tensor(&read_tensor(p)?)?,
                    None => fit_on_vocabulary(&contextual, &vocab)?,
                };
                transform.apply_to_matrix(&contextual)?
            }
        };
        let splits = cfg.subword_splits.as_ref().map(SubwordSplits::read).transpose()?;
        Ok(Self {
            vocab,
            embeddings,
            splits,
            resolution: cfg.keyword_resolution,
        })
    }

    pub fn index(&self) -> LabelIndex<'_> {
        let index = LabelIndex::new(&self.vocab, &self.embeddings).with_resolution(self.resolution);
        match &self.splits {
            Some(s) => index.with_splits(s),
            None => index,
        }
    }
}

fn open_backend(
    cfg: &RunConfig,
    logits: Option<&PathBuf>,
    manifest: Option<&PathBuf>,
    vocab_size: usize,
) -> Result<Box<dyn LogitBackend>> {
    match (&cfg.backend_url, logits, manifest) {
        (Some(url), _, _) => {
            let options = HttpBackendOptions {
                timeout: Duration::from_secs(cfg.timeout_secs),
                retries: cfg.retries,
            };
            let backend = HttpBackend::new(url, vocab_size, options)
                .map_err(|e| CliError::Backend(e.to_string()))?;
            Ok(Box::new(backend))
        }
        (None, Some(l), Some(m)) => Ok(Box::new(FileBackend::open(l, m, vocab_size)?)),
        _ => Err(ConfigError::Invalid("no backend configured".into()).into()),
    }
}

fn pipeline<'a>(
    loaded: &LoadedConfig,
    space: &'a Space,
    template: &str,
    backend: &'a dyn LogitBackend,
) -> Result<Pipeline<'a>> {
    let cfg = &loaded.resolved;
    Ok(Pipeline {
        template: parse_template(template).map_err(|e| CliError::Config(e.to_string()))?,
        classes: cfg.classes.clone(),
        index: space.index(),
        k: cfg.k,
        metric: cfg.metric,
        scheme: cfg.weights,
        mode: cfg.mode,
        backend,
        parallel: cfg.parallel,
        eval_metric: cfg.eval_metric,
        positive_class: cfg.positive_class,
        config_echo: serde_json::to_value(&loaded.raw).expect("config serializes"),
    })
}

fn load_dataset(cfg: &RunConfig) -> Result<Vec<DatasetRecord>> {
    let path = cfg.dataset.as_ref().ok_or(ConfigError::Missing("dataset"))?;
    Ok(read_dataset(path)?)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn require_out<'a>(cli: &'a Cli, what: &str) -> Result<&'a Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{what} needs --out")))
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))
}

/// Label-word listing for the configured classes, or for ad-hoc keywords.
pub fn cmd_neighbors(cfg: &RunConfig, keywords: &[String]) -> Result<VerbalizerDump> {
    cfg.validate(Requirement::Neighbors)?;
    let specs: Vec<LabelSpec> = if keywords.is_empty() {
        cfg.classes.clone()
    } else {
        keywords.iter().map(|k| LabelSpec::new(k.as_str(), &[k])).collect()
    };
    if specs.is_empty() {
        return Err(CliError::Config("no classes configured and no --keyword given".into()));
    }
    let space = Space::load(cfg)?;
    let verbalizer = build_verbalizer(&specs, &space.index(), cfg.k, cfg.metric, cfg.weights)?;
    Ok(verbalizer.dump(&space.vocab))
}

pub fn neighbors_table(dump: &VerbalizerDump) -> String {
    let mut out = String::new();
    for class in &dump.classes {
        let _ = writeln!(out, "class {}", class.class_name);
        for kw in &class.keywords {
            let _ = writeln!(out, "  keyword {:?}", kw.keyword);
            let width = kw
                .neighbors
                .iter()
                .map(|(t, ..)| format!("{t:?}").chars().count())
                .max()
                .unwrap_or(5)
                .max(5);
            let _ = writeln!(out, "    {:>4}  {:<width$}  {:>10}  {:>8}", "rank", "token", "similarity", "weight");
            for (rank, (token, _, sim, weight)) in kw.neighbors.iter().enumerate() {
                let quoted = format!("{token:?}");
                let _ = writeln!(
                    out,
                    "    {:>4}  {quoted:<width$}  {sim:>10.2}  {weight:>8.4}",
                    rank + 1
                );
            }
        }
    }
    out
}

pub fn cmd_classify(loaded: &LoadedConfig) -> Result<Vec<PredictionRecord>> {
    let cfg = &loaded.resolved;
    cfg.validate(Requirement::Scoring)?;
    let space = Space::load(cfg)?;
    let records = load_dataset(cfg)?;
    let backend = open_backend(cfg, cfg.logits.as_ref(), cfg.manifest.as_ref(), space.vocab.len())?;
    let template = cfg.template.as_deref().unwrap_or_default();
    Ok(pipeline(loaded, &space, template, backend.as_ref())?.classify(&records)?)
}

/// Results of `eval`: the main run plus one per configured template variant.
pub struct EvalOutcome {
    pub main: Evaluation,
    pub variants: Vec<(String, Evaluation)>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct VariantSummary {
    pub metric_name: String,
    pub runs: Vec<String>,
    #[serde(flatten)]
    pub summary: RunSummary,
}

impl EvalOutcome {
    pub fn summary(&self) -> Option<VariantSummary> {
        if self.variants.is_empty() {
            return None;
        }
        let runs: Vec<String> = std::iter::once("main".to_string())
            .chain(self.variants.iter().map(|(n, _)| n.clone()))
            .collect();
        let values: Vec<f64> = std::iter::once(&self.main)
            .chain(self.variants.iter().map(|(_, e)| e))
            .map(|e| e.report.metric_value)
            .collect();
        Some(VariantSummary {
            metric_name: self.main.report.metric_name.to_string(),
            runs,
            summary: summarize_runs(&values)?,
        })
    }

    /// Writes the main report into `dir`, variant reports into
    /// `dir/variants/<name>`, and `summary.json` when variants exist.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_report(dir, &self.main, &self.class_names)?;
        for (name, evaluation) in &self.variants {
            write_report(dir.join("variants").join(name), evaluation, &self.class_names)?;
        }
        if let Some(summary) = self.summary() {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
            write_file(&dir.join("summary.json"), &text)?;
        }
        Ok(())
    }
}

pub fn cmd_eval(loaded: &LoadedConfig) -> Result<EvalOutcome> {
    let cfg = &loaded.resolved;
    cfg.validate(Requirement::Scoring)?;
    let space = Space::load(cfg)?;
    let records = load_dataset(cfg)?;
    let backend = open_backend(cfg, cfg.logits.as_ref(), cfg.manifest.as_ref(), space.vocab.len())?;
    let template = cfg.template.as_deref().unwrap_or_default();
    let started = Instant::now();
    let main = pipeline(loaded, &space, template, backend.as_ref())?.evaluate(&records)?;
    log::info!("evaluated {} examples in {:.2?}", records.len(), started.elapsed());

    let mut variants = Vec::with_capacity(cfg.variants.len());
    for v in &cfg.variants {
        let own;
        let backend: &dyn LogitBackend = if v.logits.is_some() {
            own = open_backend(cfg, v.logits.as_ref(), v.manifest.as_ref(), space.vocab.len())?;
            own.as_ref()
        } else {
            backend.as_ref()
        };
        let evaluation = pipeline(loaded, &space, &v.template, backend)?.evaluate(&records)?;
        variants.push((v.name.clone(), evaluation));
    }
    let mut class_names: Vec<String> = cfg.classes.iter().map(|c| c.class_name.clone()).collect();
    if class_names.is_empty() {
        class_names = (0..main.report.per_class_confusion.len())
            .map(|i| format!("choice {i}"))
            .collect();
    }
    Ok(EvalOutcome {
        main,
        variants,
        class_names,
    })
}

pub fn cmd_sweep(loaded: &LoadedConfig, k_min: usize, k_max: usize) -> Result<Vec<SweepRow>> {
    if k_min == 0 || k_min > k_max {
        return Err(CliError::Config(format!(
            "invalid k range {k_min}..={k_max}: need 1 <= k-min <= k-max"
        )));
    }
    let cfg = &loaded.resolved;
    cfg.validate(Requirement::Scoring)?;
    let space = Space::load(cfg)?;
    let records = load_dataset(cfg)?;
    let backend = open_backend(cfg, cfg.logits.as_ref(), cfg.manifest.as_ref(), space.vocab.len())?;
    let template = cfg.template.as_deref().unwrap_or_default();
    let ks: Vec<usize> = (k_min..=k_max).collect();
    Ok(pipeline(loaded, &space, template, backend.as_ref())?.sweep_k(&records, &ks)?)
}

pub fn cmd_whiten_fit(contextual: &Path, vocab: Option<&Path>) -> Result<WhiteningTransform> {
    let tensor = read_tensor(contextual)?;
    let matrix = EmbeddingMatrix::new(tensor)?;
    let transform = match vocab {
        Some(v) => {
            let vocab = read_vocab(v)?;
            if vocab.len() != matrix.len() {
                return Err(TensorIoError::VocabSizeMismatch {
                    expected: vocab.len(),
                    found: matrix.len(),
                }
                .into());
            }
            fit_on_vocabulary(&matrix, &vocab)?
        }
        None => {
            let rows: Vec<&[f32]> = (0..matrix.len()).map(|i| matrix.row(i)).collect();
            fit_whitening(&rows)?
        }
    };
    Ok(transform)
}

pub fn run(cli: &Cli) -> Result<()> {
    let overrides = overrides(cli);
    match &cli.command {
        Command::Neighbors { keyword } => {
            let loaded = load_config(require_config(cli)?, &overrides)?;
            let dump = cmd_neighbors(&loaded.resolved, keyword)?;
            print!("{}", neighbors_table(&dump));
            if let Some(out) = &cli.out {
                let text = serde_json::to_string_pretty(&dump).expect("dump serializes") + "\n";
                write_file(out, &text)?;
            }
        }
        Command::Classify => {
            let loaded = load_config(require_config(cli)?, &overrides)?;
            let predictions = cmd_classify(&loaded)?;
            let body = crate::eval::predictions_jsonl(&predictions);
            match &cli.out {
                Some(out) => write_file(out, &body)?,
                None => print!("{body}"),
            }
        }
        Command::Eval => {
            let loaded = load_config(require_config(cli)?, &overrides)?;
            let out = require_out(cli, "eval")?;
            loaded.resolved.validate(Requirement::Scoring)?;
            let outcome = cmd_eval(&loaded)?;
            outcome.write(out)?;
            print!("{}", outcome.main.report.to_table(&outcome.class_names));
            if let Some(s) = outcome.summary() {
                println!(
                    "\n{} over {} runs: {:.6} +/- {:.6}",
                    s.metric_name,
                    s.runs.len(),
                    s.summary.mean,
                    s.summary.stderr
                );
            }
        }
        Command::Sweep { k_min, k_max } => {
            let loaded = load_config(require_config(cli)?, &overrides)?;
            let out = require_out(cli, "sweep")?;
            let rows = cmd_sweep(&loaded, *k_min, *k_max)?;
            write_sweep_csv(out, &rows)?;
            for row in &rows {
                println!("k={:<4} {}={:.6}", row.k, loaded.resolved.eval_metric, row.metric);
            }
        }
        Command::WhitenFit { contextual } => {
            let out = require_out(cli, "whiten-fit")?;
            let loaded = cli
                .config
                .as_deref()
                .map(|p| load_config(p, &overrides))
                .transpose()?;
            let cfg = loaded.as_ref().map(|l| &l.resolved);
            let contextual = contextual
                .clone()
                .or_else(|| cfg.and_then(|c| c.whitening.as_ref()).map(|w| w.contextual.clone()))
                .ok_or_else(|| {
                    CliError::Config("whiten-fit needs --contextual or whitening.contextual".into())
                })?;
            let vocab = cfg.and_then(|c| c.vocab.clone());
            let transform = cmd_whiten_fit(&contextual, vocab.as_deref())?;
            write_tensor(out, &transform.to_tensor())?;
            println!(
                "fitted {}-dimensional whitening transform -> {}",
                transform.dim(),
                out.display()
            );
        }
    }
    Ok(())
}
