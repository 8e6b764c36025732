//! The `fairsift` command line.
//!
//! Exit codes: 0 on success, 2 for I/O or parse failures, 3 for
//! configuration failures. Every output file gets a `<file>.manifest.json`
//! sidecar recording the command, resolved flags, tool version and a
//! timestamp; the output file itself depends only on inputs and flags.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{
    expected_bias_binomial, generate_synthetic_corpus, monte_carlo_expected_bias, query_bias_curve,
    query_score_spearman, tradeoff_sweep, QuantileBiasCurve, SyntheticSpec,
};
use crate::attributes::{
    classifier_predict, train_softmax_classifier, zero_shot_embed_predict, zero_shot_prompt_predict,
    ClassEmbeddings, PredictionSet, PredictionTable, PromptedQueryEmbeddings,
};
use crate::corpus::{
    parse_image_records, parse_labeled_vectors, parse_prediction_records, parse_prompted_vectors,
    parse_query_records, parse_scheme, sniff_dimension, validate_corpus, write_image_records,
    write_prediction_records, write_query_records, write_scheme, AttributeScheme, Corpus, ImageRecord,
    LabelIndex, QueryRecord,
};
use crate::error::Error;
use crate::metrics::evaluate;
use crate::selection::{pbm_select, pbm_select_tradeoff, random_select, OddPickPolicy, SelectionConfig};
use crate::similarity::{rank_top_k, RetrievalBag, ScoredImage};

pub const THREADS_ENV: &str = "FAIRSIFT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fairsift", version, about = "Fair top-K retrieval with group-balanced re-ranking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Retrieve a bag of K images per query.
    Retrieve(RetrieveArgs),
    /// Score retrieval bags: AbsBias@K, Bias@K, Recall@K, mAP@K.
    Evaluate(EvaluateArgs),
    /// Statistical analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Predict an attribute for every image.
    Predict(PredictArgs),
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Check a corpus and report group counts.
    Validate(ValidateArgs),
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Expected bag bias of an attribute-blind retriever over a (k, alpha) grid.
    Binomial(BinomialArgs),
    /// Per-query bias curve over similarity quantiles, with a linear fit.
    Quantile(QuantileArgs),
    /// Bias/recall frontier over fair-step probabilities.
    Tradeoff(TradeoffArgs),
    /// Per-query Spearman correlation of similarity score and attribute.
    Spearman(SpearmanArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Scheme file; defaults to the binary gender scheme with N/A.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
}

/// A corpus from files, or a synthetic one when `--images` is absent.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusOrSynthArgs {
    #[arg(long, requires = "queries")]
    pub images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthSpecArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Topk,
    Pbm,
    PbmTradeoff,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OddPick {
    BestScore,
    RandomGroup,
}

impl From<OddPick> for OddPickPolicy {
    fn from(p: OddPick) -> Self {
        match p {
            OddPick::BestScore => OddPickPolicy::BestScore,
            OddPick::RandomGroup => OddPickPolicy::RandomGroup,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Prediction file; without it, balanced methods use ground-truth labels.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Probability of a balanced step (pbm-tradeoff only).
    #[arg(long, default_value_t = 1.0)]
    pub fair_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "best-score")]
    pub odd_pick: OddPick,
    /// Draw random candidates from each query's relevant set only.
    #[arg(long)]
    pub restrict_relevant: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    #[value(alias = "ground_truth")]
    GroundTruth,
    Predictions,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Retrieval output from `retrieve`.
    #[arg(long)]
    pub bags: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum, default_value = "ground-truth")]
    pub labels: LabelSource,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Method name recorded in the report.
    #[arg(long, default_value = "unknown")]
    pub method: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-query CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    ZeroShotEmbed,
    ZeroShotPrompt,
    Classifier,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Variant,
    /// Class-embedding file (zero-shot-embed).
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Prompted-query embedding file (zero-shot-prompt).
    #[arg(long)]
    pub prompted: Option<PathBuf>,
    /// `id`/`label` records naming training images (classifier).
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthSpecArgs {
    #[arg(long = "n", default_value_t = 5000)]
    pub n_images: usize,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub neutral_fraction: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub model_bias: f64,
    #[arg(long = "n-queries", default_value_t = 10)]
    pub n_queries: usize,
    #[arg(long, default_value_t = 100)]
    pub relevant: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.6)]
    pub attribute_strength: f64,
    #[arg(long = "synth-seed", default_value_t = 0)]
    pub synth_seed: u64,
}

impl SynthSpecArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_images: self.n_images,
            d: self.d,
            alpha: self.alpha,
            neutral_fraction: self.neutral_fraction,
            model_bias: self.model_bias,
            n_queries: self.n_queries,
            seed: self.synth_seed,
            relevant_per_query: self.relevant,
            noise: self.noise,
            attribute_strength: self.attribute_strength,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub spec: SynthSpecArgs,
    /// Alias of `--synth-seed`; wins when both are given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving images.jsonl, queries.jsonl, scheme.json, classes.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BinomialArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub alpha: Vec<f64>,
    /// Add Monte Carlo mean and standard error columns.
    #[arg(long)]
    pub mc_trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QuantileArgs {
    #[command(flatten)]
    pub corpus: CorpusOrSynthArgs,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Restrict to one query id.
    #[arg(long = "query")]
    pub query: Option<String>,
    /// Curve CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-query linear fit CSV; printed to stdout when absent.
    #[arg(long)]
    pub fit_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TradeoffArgs {
    #[command(flatten)]
    pub corpus: CorpusOrSynthArgs,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub p_grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "best-score")]
    pub odd_pick: OddPick,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpearmanArgs {
    #[command(flatten)]
    pub corpus: CorpusOrSynthArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self { code: 3, message: msg.into() }
    }

    fn io(msg: impl Into<String>) -> Self {
        Self { code: 2, message: msg.into() }
    }

    fn at(path: &Path, e: Error) -> Self {
        Self { code: if e.is_config() { 3 } else { 2 }, message: format!("{}: {e}", path.display()) }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: if e.is_config() { 3 } else { 2 }, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Configuration embedded beside (and, for reports, inside) every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl RunManifest {
    fn new<T: Serialize>(command: &str, config: &T) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            version: env!("CARGO_PKG_VERSION"),
            timestamp: None,
        }
    }

    fn write_beside(&self, out: &Path) -> CliResult<()> {
        let mut stamped = self.clone();
        stamped.timestamp = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let text = serde_json::to_string_pretty(&stamped).map_err(|e| CliError::io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("{}: {e}", path.display()))
}

fn load_scheme(path: Option<&Path>) -> CliResult<AttributeScheme> {
    match path {
        Some(p) => parse_scheme(open(p)?).map_err(|e| CliError::at(p, e)),
        None => Ok(AttributeScheme::gender()),
    }
}

fn load_images(path: &Path, scheme: &AttributeScheme) -> CliResult<(usize, Vec<ImageRecord>)> {
    let text = read_text(path)?;
    let d = sniff_dimension(&text)
        .map_err(|e| CliError::at(path, e))?
        .ok_or_else(|| CliError::io(format!("{}: no image records", path.display())))?;
    let images = parse_image_records(text.as_bytes(), d, scheme).map_err(|e| CliError::at(path, e))?;
    Ok((d, images))
}

fn load_corpus(images: &Path, queries: &Path, scheme: Option<&Path>) -> CliResult<Corpus> {
    let scheme = load_scheme(scheme)?;
    let (d, images) = load_images(images, &scheme)?;
    let queries = parse_query_records(open(queries)?, d).map_err(|e| CliError::at(queries, e))?;
    Ok(Corpus { d, images, queries, scheme })
}

fn load_corpus_or_synth(args: &CorpusOrSynthArgs) -> CliResult<Corpus> {
    match (&args.images, &args.queries) {
        (Some(i), Some(q)) => load_corpus(i, q, args.scheme.as_deref()),
        _ => Ok(generate_synthetic_corpus(&args.synth.spec())?),
    }
}

fn load_predictions(path: &Path, scheme: &AttributeScheme) -> CliResult<PredictionTable> {
    parse_prediction_records(open(path)?, scheme).map_err(|e| CliError::at(path, e))
}

fn sorted_queries(corpus: &Corpus) -> Vec<&QueryRecord> {
    let mut qs: Vec<_> = corpus.queries.iter().collect();
    qs.sort_by(|a, b| a.id.cmp(&b.id));
    qs
}

/// One line of a retrieval output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub query_id: String,
    pub rank: usize,
    pub image_id: String,
    pub score: f64,
    pub predicted_label: Option<String>,
    pub k: usize,
}

/// Reads a retrieval output file back into bags ordered by query id.
pub fn read_bags<R: BufRead>(reader: R) -> crate::Result<Vec<RetrievalBag>> {
    let mut grouped: BTreeMap<String, (usize, Vec<(usize, ScoredImage)>)> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BagRecord = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedRecord { line: i + 1, reason: e.to_string() })?;
        let entry = grouped.entry(rec.query_id.clone()).or_insert((rec.k, Vec::new()));
        if entry.0 != rec.k {
            return Err(Error::MalformedRecord { line: i + 1, reason: format!("k {} disagrees with {}", rec.k, entry.0) });
        }
        entry.1.push((rec.rank, ScoredImage::new(rec.image_id, rec.score)));
    }
    Ok(grouped
        .into_iter()
        .map(|(query_id, (k, mut items))| {
            items.sort_by_key(|(r, _)| *r);
            RetrievalBag { query_id, items: items.into_iter().map(|(_, s)| s).collect(), k }
        })
        .collect())
}

fn cmd_retrieve(args: &RetrieveArgs) -> CliResult<()> {
    let corpus = load_corpus(&args.corpus.images, &args.corpus.queries, args.corpus.scheme.as_deref())?;
    let config = SelectionConfig::new(args.k)
        .with_fair_probability(if args.method == Method::PbmTradeoff { args.fair_prob } else { 1.0 })
        .with_seed(args.seed)
        .with_policy(args.odd_pick.into());
    config.validate()?;

    let table = match &args.predictions {
        Some(p) => Some(load_predictions(p, &corpus.scheme)?),
        None => None,
    };
    let needs_groups = matches!(args.method, Method::Pbm | Method::PbmTradeoff);
    let table = match (table, needs_groups) {
        (Some(t), _) => Some(t),
        (None, true) => match PredictionSet::from_ground_truth(&corpus.images, &corpus.scheme) {
            Ok(set) => Some(PredictionTable::from_global(set)),
            Err(_) => return Err(CliError::config("PBM requires predictions or labels")),
        },
        (None, false) => None,
    };

    let queries = sorted_queries(&corpus);
    let bags: Vec<RetrievalBag> = queries
        .par_iter()
        .map(|q| {
            let preds = table.as_ref().map(|t| t.for_query(&q.id));
            match args.method {
                Method::Topk => rank_top_k(q, &corpus.images, args.k),
                Method::Pbm => pbm_select(q, &corpus.images, preds.expect("checked"), &config),
                Method::PbmTradeoff => pbm_select_tradeoff(q, &corpus.images, preds.expect("checked"), &config),
                Method::Random => random_select(q, &corpus.images, args.k, args.seed, args.restrict_relevant),
            }
        })
        .collect::<crate::Result<_>>()
        .map_err(|e| match e {
            Error::MissingPrediction(_) => CliError::config(format!("PBM requires predictions or labels: {e}")),
            e => CliError::from(e),
        })?;

    let mut w = create(&args.out)?;
    for bag in &bags {
        let preds = table.as_ref().map(|t| t.for_query(&bag.query_id));
        for (i, item) in bag.items.iter().enumerate() {
            let rec = BagRecord {
                query_id: bag.query_id.clone(),
                rank: i + 1,
                image_id: item.image_id.clone(),
                score: item.score,
                predicted_label: preds
                    .and_then(|p| p.get(&item.image_id))
                    .map(|p| corpus.scheme.label_name(p.label).to_string()),
                k: bag.k,
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| CliError::io(e.to_string()))?;
            w.write_all(b"\n").map_err(io_err(&args.out))?;
        }
    }
    w.flush().map_err(io_err(&args.out))?;
    RunManifest::new("retrieve", args).write_beside(&args.out)
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    report: &'a crate::metrics::EvaluationReport,
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let corpus = load_corpus(&args.corpus.images, &args.corpus.queries, args.corpus.scheme.as_deref())?;
    let bags = read_bags(open(&args.bags)?).map_err(|e| CliError::at(&args.bags, e))?;
    let labels = match args.labels {
        LabelSource::GroundTruth => {
            if let Some(im) = corpus.images.iter().find(|im| im.label.is_none()) {
                return Err(CliError::config(format!(
                    "ground-truth labels requested but image {:?} has none",
                    im.id
                )));
            }
            corpus.labels()
        }
        LabelSource::Predictions => {
            let path = args
                .predictions
                .as_ref()
                .ok_or_else(|| CliError::config("--labels predictions needs --predictions"))?;
            LabelIndex::from(load_predictions(path, &corpus.scheme)?.global())
        }
    };
    let report = evaluate(&args.method, &bags, &corpus.queries, &labels, args.seed)?;
    let manifest = RunManifest::new("evaluate", args);
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &ReportDocument { manifest: &manifest, report: &report })
        .map_err(|e| CliError::io(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err(&args.out))?;
    w.flush().map_err(io_err(&args.out))?;
    manifest.write_beside(&args.out)?;
    if let Some(csv) = &args.csv {
        let mut w = create(csv)?;
        report.write_csv(&mut w)?;
        w.flush().map_err(io_err(csv))?;
        manifest.write_beside(csv)?;
    }
    let a = &report.aggregate;
    println!(
        "AbsBias@{k}={:.4} Bias@{k}={:.4} Recall@{k}={} mAP@{k}={:.2}",
        a.abs_bias_at_k,
        a.bias_at_k,
        a.recall_at_k_percent.map_or("n/a".to_string(), |r| format!("{r:.2}")),
        a.map_at_k_percent,
        k = report.k
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    let scheme = load_scheme(args.scheme.as_deref())?;
    let (d, images) = load_images(&args.images, &scheme)?;
    let mut w = create(&args.out)?;
    match args.variant {
        Variant::ZeroShotEmbed => {
            let path = args
                .classes
                .as_ref()
                .ok_or_else(|| CliError::config("zero-shot-embed needs --classes"))?;
            let vectors = parse_labeled_vectors(open(path)?, d, &scheme).map_err(|e| CliError::at(path, e))?;
            let classes = ClassEmbeddings::new(&scheme, vectors.into_iter().map(|(_, l, v)| (l, v)).collect())
                .map_err(|e| CliError::at(path, e))?;
            let preds = zero_shot_embed_predict(&images, &classes)?;
            write_prediction_records(&mut w, &preds, &scheme, None)?;
        }
        Variant::ZeroShotPrompt => {
            let path = args
                .prompted
                .as_ref()
                .ok_or_else(|| CliError::config("zero-shot-prompt needs --prompted"))?;
            let by_query = parse_prompted_vectors(open(path)?, d, &scheme).map_err(|e| CliError::at(path, e))?;
            if by_query.is_empty() {
                return Err(CliError::config(format!("{}: no prompted embeddings", path.display())));
            }
            for (qid, vectors) in by_query {
                let prompted = PromptedQueryEmbeddings::new(qid.clone(), &scheme, vectors)
                    .map_err(|e| CliError::at(path, e))?;
                let preds = zero_shot_prompt_predict(&images, &prompted)?;
                write_prediction_records(&mut w, &preds, &scheme, Some(&qid))?;
            }
        }
        Variant::Classifier => {
            let path = args
                .train_labels
                .as_ref()
                .ok_or_else(|| CliError::config("classifier needs --train-labels"))?;
            let table = load_predictions(path, &scheme)?;
            let by_id: BTreeMap<&str, &ImageRecord> = images.iter().map(|im| (im.id.as_str(), im)).collect();
            let train = table
                .global()
                .iter()
                .map(|(id, p)| {
                    by_id
                        .get(id)
                        .map(|im| (im.embedding.clone(), p.label))
                        .ok_or_else(|| CliError::io(format!("{}: unknown image id {id:?}", path.display())))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let clf = train_softmax_classifier(&train, &scheme, args.lr, args.epochs, args.seed)?;
            if let Some(meta) = clf.training_meta() {
                eprintln!("trained on {} images, final loss {:.6}", train.len(), meta.final_loss);
            }
            let preds = classifier_predict(&clf, &images)?;
            write_prediction_records(&mut w, &preds, &scheme, None)?;
        }
    }
    w.flush().map_err(io_err(&args.out))?;
    RunManifest::new("predict", args).write_beside(&args.out)
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let mut spec = args.spec.spec();
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let corpus = generate_synthetic_corpus(&spec)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> crate::Result<()>| -> CliResult<()> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w)?;
        w.flush().map_err(io_err(&path))?;
        RunManifest::new("synth", &spec).write_beside(&path)
    };
    write("images.jsonl", &|w| write_image_records(w, &corpus.images, &corpus.scheme))?;
    write("queries.jsonl", &|w| write_query_records(w, &corpus.queries))?;
    write("scheme.json", &|w| write_scheme(w, &corpus.scheme))?;
    let classes: Vec<ImageRecord> = spec
        .class_vectors()
        .into_iter()
        .map(|(l, v)| ImageRecord { id: corpus.scheme.label_name(l).to_string(), embedding: v, label: Some(l) })
        .collect();
    write("classes.jsonl", &|w| write_image_records(w, &classes, &corpus.scheme))?;

    let report = validate_corpus(&corpus, spec.relevant_per_query)?;
    let rhos: Vec<f64> = corpus
        .queries
        .iter()
        .filter_map(|q| query_score_spearman(&corpus, q).ok())
        .collect();
    let mean_rho = rhos.iter().sum::<f64>() / rhos.len().max(1) as f64;
    println!(
        "wrote {} images and {} queries to {}",
        corpus.images.len(),
        corpus.queries.len(),
        dir.display()
    );
    println!(
        "realized alpha={} mean spearman(score, g)={mean_rho:.4}",
        report.alpha.map_or("n/a".to_string(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> CliResult<()> {
    let corpus = load_corpus(&args.corpus.images, &args.corpus.queries, args.corpus.scheme.as_deref())?;
    let report = validate_corpus(&corpus, args.k)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::io(e.to_string()))?;
    println!("{text}");
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// Writes `body` to `out`, or to stdout when no path is given.
fn emit<T: Serialize>(out: Option<&Path>, command: &str, config: &T, body: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(body.as_bytes()).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
            RunManifest::new(command, config).write_beside(path)
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn cmd_binomial(args: &BinomialArgs) -> CliResult<()> {
    let mut body = String::from("k,alpha,expected_bias");
    if args.mc_trials.is_some() {
        body.push_str(",mc_mean,mc_std_error");
    }
    body.push('\n');
    for &k in &args.k {
        for &alpha in &args.alpha {
            let exact = expected_bias_binomial(k, alpha)?;
            body.push_str(&format!("{k},{alpha},{exact}"));
            if let Some(trials) = args.mc_trials {
                let mc = monte_carlo_expected_bias(k, alpha, trials, args.seed)?;
                body.push_str(&format!(",{},{}", mc.mean, mc.std_error));
            }
            body.push('\n');
        }
    }
    emit(args.out.as_deref(), "analyze binomial", args, &body)
}

fn cmd_quantile(args: &QuantileArgs) -> CliResult<()> {
    let corpus = load_corpus_or_synth(&args.corpus)?;
    let queries: Vec<&QueryRecord> = match &args.query {
        Some(id) => vec![corpus
            .query(id)
            .ok_or_else(|| CliError::config(format!("no query {id:?}")))?],
        None => sorted_queries(&corpus),
    };
    let curves: Vec<(String, QuantileBiasCurve)> = queries
        .par_iter()
        .map(|q| Ok((q.id.clone(), query_bias_curve(&corpus, q, args.bins)?)))
        .collect::<crate::Result<_>>()?;

    let mut curve_csv = Vec::new();
    writeln!(curve_csv, "{}", QuantileBiasCurve::CSV_HEADER).expect("vec write");
    let mut fit_csv = String::from("query_id,slope,intercept,r_squared\n");
    for (qid, curve) in &curves {
        curve.write_csv(&mut curve_csv, qid)?;
        let fit = curve.fit()?;
        fit_csv.push_str(&format!("{qid},{},{},{}\n", fit.slope, fit.intercept, fit.r_squared));
    }
    emit(args.out.as_deref(), "analyze quantile", args, &String::from_utf8_lossy(&curve_csv))?;
    emit(args.fit_out.as_deref(), "analyze quantile", args, &fit_csv)
}

fn cmd_tradeoff(args: &TradeoffArgs) -> CliResult<()> {
    let corpus = load_corpus_or_synth(&args.corpus)?;
    let table = match &args.predictions {
        Some(p) => load_predictions(p, &corpus.scheme)?,
        None => PredictionTable::from_global(
            PredictionSet::from_ground_truth(&corpus.images, &corpus.scheme)
                .map_err(|_| CliError::config("PBM requires predictions or labels"))?,
        ),
    };
    if let Some(p) = args.p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CliError::config(format!("p-grid value {p} outside [0, 1]")));
    }
    let points = tradeoff_sweep(&corpus, &table, args.k, &args.p_grid, args.reps, args.seed, args.odd_pick.into())?;
    let mut body = String::from("fair_probability,abs_bias_at_k,abs_bias_se,recall_at_k,recall_se,map_at_k,map_se\n");
    for pt in &points {
        let (r, rse) = pt.recall.map_or((f64::NAN, f64::NAN), |r| (r.mean, r.std_error));
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            pt.fair_probability, pt.abs_bias.mean, pt.abs_bias.std_error, r, rse, pt.map.mean, pt.map.std_error
        ));
    }
    emit(args.out.as_deref(), "analyze tradeoff", args, &body)
}

fn cmd_spearman(args: &SpearmanArgs) -> CliResult<()> {
    let corpus = load_corpus_or_synth(&args.corpus)?;
    let mut body = String::from("query_id,spearman\n");
    for q in sorted_queries(&corpus) {
        match query_score_spearman(&corpus, q) {
            Ok(rho) => body.push_str(&format!("{},{rho}\n", q.id)),
            Err(Error::ZeroVariance) => body.push_str(&format!("{},nan\n", q.id)),
            Err(e) => return Err(e.into()),
        }
    }
    emit(args.out.as_deref(), "analyze spearman", args, &body)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Analyze(AnalyzeCommand::Binomial(a)) => cmd_binomial(a),
        Command::Analyze(AnalyzeCommand::Quantile(a)) => cmd_quantile(a),
        Command::Analyze(AnalyzeCommand::Tradeoff(a)) => cmd_tradeoff(a),
        Command::Analyze(AnalyzeCommand::Spearman(a)) => cmd_spearman(a),
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a pool may already exist when embedded in another program
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `std::env::args`, runs the command, and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
