//! Command-line front end. Every subcommand writes into one run directory
//! and lists what it wrote in `artifacts.json`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{confusion, export_report, group_loss_stats, top_error_types, AnalysisError, Report};
use crate::coattention::AttentionMode;
use crate::data::{
    build_corpus_text, clean_text, normalize_description, split_indices, synth_generate, text_length_histogram,
    write_dataset, BlobRef, DataError, Dtype, Example, HistogramBucket, Manifest, ManifestHeader, SyntheticConfig,
};
use crate::diagnostics::{gradcheck_suite, FD_TOLERANCE};
use crate::ensemble::{collect_probs, predict_ensemble, split_meta, train_meta, write_stacked, EnsembleError, MetaConfig};
use crate::model::{ModelSpec, ModelVariant};
use crate::tensor::TensorError;
use crate::train::{evaluate, train, write_log, Checkpoint, TrainConfig, TrainError};

/// Environment variable naming the base run directory.
pub const RUN_DIR_ENV: &str = "COFUSE_RUN_DIR";
pub const ARTIFACTS_JSON: &str = "artifacts.json";
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Tensor(_) | TrainError::Checkpoint { .. } => CliError::Data(e.to_string()),
            TrainError::NonFiniteGradient { .. } | TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Train(t) => t.into(),
            EnsembleError::Data(d) => d.into(),
            EnsembleError::Invalid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::SampleTooSmall { .. } | AnalysisError::DegenerateSamples => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cofuse", version, about = "Co-attention multimodal classifier on stored or synthetic embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (manifest, blobs, train/val split).
    Synth(SynthArgs),
    /// Clean titles and descriptions, split, and export the length histogram.
    Prep(PrepArgs),
    /// Train one model and save its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and write metrics and per-item predictions.
    Eval(EvalArgs),
    /// Train the full model and its four ablations and tabulate validation F1.
    Ablate(AblateArgs),
    /// Stack base checkpoints' probabilities and train a meta-network.
    Ensemble(EnsembleArgs),
    /// Error analysis: confusion, top errors, grouped losses, Welch test.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient checks over every op and block.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct RunDir {
    /// Run directory (default: $COFUSE_RUN_DIR/<subcommand>, else runs/<subcommand>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic config JSON; omitted fields are an error, so pass a full config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 640)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    pub val_fraction: f64,
    /// Store blobs as 64-bit floats instead of 32-bit.
    #[arg(long)]
    pub f64: bool,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Input manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub bucket_width: usize,
    #[command(flatten)]
    pub run: RunDir,
}

fn parse_attention(s: &str) -> std::result::Result<AttentionMode, String> {
    match s {
        "image" => Ok(AttentionMode::ImageOnly),
        "text" => Ok(AttentionMode::TextOnly),
        other => other.parse(),
    }
}

#[derive(Debug, Args, Clone)]
pub struct TrainOverrides {
    /// Training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Dataset directory with train.jsonl/val.jsonl, or a manifest to split.
    #[arg(long)]
    pub data: PathBuf,
    /// coattention, baseline_concat, baseline_bilinear or baseline_dot.
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    /// Replace the BiLSTM with one affine layer.
    #[arg(long)]
    pub no_bilstm: bool,
    /// Feed the raw top layer instead of the learned layer mix.
    #[arg(long)]
    pub top_layer_only: bool,
    /// both, image or text.
    #[arg(long, value_parser = parse_attention)]
    pub attention: Option<AttentionMode>,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory, or a train run directory containing one.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::Val)]
    pub split: SplitChoice,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub data: PathBuf,
    /// Seeds per configuration (seed, seed+1, ...); the table reports the median.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Base checkpoints (or train run directories).
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Meta-network config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of validation items held out as meta-test.
    #[arg(long, default_value_t = 0.5)]
    pub test_fraction: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// predictions.json written by `eval`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Manifest (or dataset directory) supplying description flags and lengths.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long, default_value_t = 5)]
    pub bucket_width: usize,
    #[command(flatten)]
    pub run: RunDir,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunDir,
}

/// Files written by one invocation, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub subcommand: String,
    pub files: Vec<String>,
}

/// Per-item output of `eval`, input to `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub k: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub split: String,
    pub items: usize,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub mean_loss: f64,
    pub checkpoint_epoch: usize,
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prep(a) => cmd_prep(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn run_dir(run: &RunDir, subcommand: &str) -> Result<PathBuf> {
    let dir = match &run.out {
        Some(p) => p.clone(),
        None => std::env::var_os(RUN_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(subcommand),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

struct Outputs {
    dir: PathBuf,
    subcommand: &'static str,
    files: Vec<String>,
}

impl Outputs {
    fn new(run: &RunDir, subcommand: &'static str) -> Result<Self> {
        Ok(Outputs {
            dir: run_dir(run, subcommand)?,
            subcommand,
            files: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.dir.join(rel)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.path(rel);
        write_text(&path, &serde_json::to_string_pretty(value).expect("serializable"))
    }

    fn finish(mut self) -> Result<()> {
        self.files.sort();
        self.files.dedup();
        let a = Artifacts {
            subcommand: self.subcommand.to_string(),
            files: self.files,
        };
        write_text(&self.dir.join(ARTIFACTS_JSON), &serde_json::to_string_pretty(&a).expect("serializable"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, format!("{text}\n")).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Typed config load; errors name the offending field path.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Usage(format!("{}: at `{field}`: {}", path.display(), e.inner()))
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// A dataset resolved into train and validation examples.
pub struct LoadedData {
    pub header: ManifestHeader,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl LoadedData {
    pub fn select(&self, split: SplitChoice) -> Vec<Example> {
        match split {
            SplitChoice::Train => self.train.clone(),
            SplitChoice::Val => self.val.clone(),
            SplitChoice::All => self.train.iter().chain(&self.val).cloned().collect(),
        }
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.jsonl")
    } else {
        path.to_path_buf()
    }
}

/// A directory holding `train.jsonl` and `val.jsonl` is used as is;
/// otherwise the manifest (or `<dir>/manifest.jsonl`) is split with the
/// default validation fraction under `seed`.
pub fn load_data(path: &Path, seed: u64) -> Result<LoadedData> {
    let (tp, vp) = (path.join("train.jsonl"), path.join("val.jsonl"));
    if path.is_dir() && tp.is_file() && vp.is_file() {
        let (t, v) = (Manifest::read(&tp)?, Manifest::read(&vp)?);
        if t.header != v.header {
            return Err(CliError::Data(format!("{}: train and val headers differ", path.display())));
        }
        return Ok(LoadedData {
            header: t.header,
            train: t.load_examples()?,
            val: v.load_examples()?,
        });
    }
    let m = Manifest::read(&manifest_path(path))?;
    let all = m.load_examples()?;
    let labels: Vec<usize> = all.iter().map(Example::label).collect();
    let s = split_indices(&labels, DEFAULT_VAL_FRACTION, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| all[i].clone()).collect();
    Ok(LoadedData {
        header: m.header,
        train: pick(&s.train),
        val: pick(&s.val),
    })
}

fn write_split(out: &mut Outputs, m: &Manifest, fraction: f64, seed: u64) -> Result<()> {
    let labels: Vec<usize> = m.items.iter().map(|i| i.label).collect();
    let s = split_indices(&labels, fraction, seed)?;
    for (name, ix) in [("train.jsonl", &s.train), ("val.jsonl", &s.val)] {
        let part = Manifest {
            header: m.header,
            items: ix.iter().map(|&i| m.items[i].clone()).collect(),
            base_dir: m.base_dir.clone(),
        };
        part.write(&out.path(name))?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => SyntheticConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.rho {
        cfg.rho = r;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    cfg.validate()?;
    let mut out = Outputs::new(&a.run, "synth")?;
    let data = synth_generate(&cfg, a.count)?;
    let dtype = if a.f64 { Dtype::F64 } else { Dtype::F32 };
    let mpath = write_dataset(&out.dir, data.header, &data.examples, dtype)?;
    out.files.extend(["manifest.jsonl", "blobs/text.bin", "blobs/image.bin"].map(String::from));
    out.json("synth_config.json", &cfg)?;
    let m = Manifest::read(&mpath)?;
    write_split(&mut out, &m, a.val_fraction, cfg.seed)?;
    log::info!("synth: {} items in {}", a.count, out.dir.display());
    out.finish()
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    id: &'a str,
    label: usize,
    text: String,
}

fn absolute(m: &Manifest, r: &BlobRef) -> Result<BlobRef> {
    let p = m.resolve(r);
    let p = fs::canonicalize(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    Ok(BlobRef {
        path: p.to_string_lossy().into_owned(),
        offset: r.offset,
    })
}

fn cmd_prep(a: PrepArgs) -> Result<()> {
    let mut m = Manifest::read(&manifest_path(&a.manifest))?;
    let mut out = Outputs::new(&a.run, "prep")?;
    let mut corpus = Vec::with_capacity(m.items.len());
    let mut cleaned = Vec::with_capacity(m.items.len());
    for item in &m.items {
        let text = build_corpus_text(&item.title, item.description.as_deref())
            .map_err(|e| CliError::Data(format!("item {}: {e}", item.id)))?;
        let description = normalize_description(item.description.as_deref());
        let mut rec = item.clone();
        rec.title = clean_text(&item.title);
        rec.has_description = description.is_some();
        rec.description = description;
        rec.text_ref = absolute(&m, &item.text_ref)?;
        rec.image_ref = absolute(&m, &item.image_ref)?;
        corpus.push(serde_json::to_string(&CorpusLine {
            id: &rec.id,
            label: rec.label,
            text,
        })
        .expect("serializable"));
        cleaned.push(rec);
    }
    m.items = cleaned;
    m.base_dir = out.dir.clone();
    m.write(&out.path("manifest.jsonl"))?;
    write_text(&out.path("corpus.jsonl"), &corpus.join("\n"))?;
    write_split(&mut out, &m, a.val_fraction, a.seed)?;
    let lengths: Vec<usize> = m.items.iter().map(|i| i.text_len).collect();
    let hist = text_length_histogram(&lengths, a.bucket_width)?;
    write_csv(&out.path("histogram.csv"), &["start", "end", "count"], &histogram_rows(&hist))?;
    out.finish()
}

fn histogram_rows(hist: &[HistogramBucket]) -> Vec<Vec<String>> {
    hist.iter()
        .map(|b| vec![b.start.to_string(), b.end.to_string(), b.count.to_string()])
        .collect()
}

fn base_config(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &o.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.base_lr = lr;
    }
    Ok(cfg)
}

/// Trains, saves the best checkpoint and the log under `dir`. On divergence
/// the last good checkpoint is still saved before the error is returned.
fn train_into(out: &mut Outputs, prefix: &str, cfg: &TrainConfig, data: &LoadedData) -> Result<Checkpoint> {
    cfg.validate()?;
    out.json(&format!("{prefix}config.json"), cfg)?;
    match train(cfg, data.header, &data.train, &data.val) {
        Ok(outcome) => {
            outcome.best.save(&out.path(&format!("{prefix}checkpoint")))?;
            write_log(&out.path(&format!("{prefix}log.jsonl")), &outcome.log)?;
            Ok(outcome.best)
        }
        Err(TrainError::Diverged { epoch, reason, last_good }) => {
            last_good.save(&out.path(&format!("{prefix}checkpoint")))?;
            Err(TrainError::Diverged { epoch, reason, last_good }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.overrides)?;
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if a.no_bilstm {
        cfg.model.use_bilstm = false;
    }
    if a.top_layer_only {
        cfg.model.use_weighted_layers = false;
    }
    if let Some(m) = a.attention {
        cfg.model.attention_mode = m;
    }
    cfg.validate()?;
    let data = load_data(&a.data, cfg.seed)?;
    let mut out = Outputs::new(&a.run, "train")?;
    let result = train_into(&mut out, "", &cfg, &data);
    out.finish()?;
    let best = result?;
    println!("best epoch {} val macro-F1 {:.4}", best.epoch, best.val_macro_f1);
    Ok(())
}

/// Accepts a checkpoint directory or a run directory holding `checkpoint/`.
pub fn find_checkpoint(path: &Path) -> PathBuf {
    let nested = path.join("checkpoint");
    if !path.join("checkpoint.json").is_file() && nested.join("checkpoint.json").is_file() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&find_checkpoint(&a.checkpoint))?;
    let data = load_data(&a.data, ckpt.config.seed)?;
    if data.header != ckpt.header {
        return Err(CliError::Data(format!(
            "dataset header {:?} does not match the checkpoint's {:?}",
            data.header, ckpt.header
        )));
    }
    let items = data.select(a.split);
    let ev = evaluate(&ckpt.model, &items, ckpt.config.max_seq_len)?;
    let k = ckpt.header.k;
    let mut out = Outputs::new(&a.run, "eval")?;
    out.json(
        "metrics.json",
        &Metrics {
            split: format!("{:?}", a.split).to_lowercase(),
            items: items.len(),
            macro_f1: ev.macro_f1,
            per_class_f1: ev.confusion(k).per_class_f1(),
            mean_loss: ev.mean_loss(),
            checkpoint_epoch: ckpt.epoch,
        },
    )?;
    out.json(
        "predictions.json",
        &Predictions {
            k,
            ids: items.iter().map(|e| e.record.id.clone()).collect(),
            labels: ev.labels,
            predictions: ev.predictions,
            probs: ev.probs,
            losses: ev.losses,
        },
    )?;
    println!("macro-F1 {:.4} over {} items", ev.macro_f1, items.len());
    out.finish()
}

/// The full model and its four ablations.
pub fn ablation_specs(base: &ModelSpec) -> Vec<(&'static str, ModelSpec)> {
    let full = ModelSpec {
        variant: ModelVariant::Coattention,
        use_bilstm: true,
        use_weighted_layers: true,
        attention_mode: AttentionMode::Both,
        ..base.clone()
    };
    vec![
        ("full", full.clone()),
        (
            "no_bilstm",
            ModelSpec {
                use_bilstm: false,
                ..full.clone()
            },
        ),
        (
            "top_layer_only",
            ModelSpec {
                use_weighted_layers: false,
                ..full.clone()
            },
        ),
        (
            "text_only",
            ModelSpec {
                attention_mode: AttentionMode::TextOnly,
                ..full.clone()
            },
        ),
        (
            "image_only",
            ModelSpec {
                attention_mode: AttentionMode::ImageOnly,
                ..full
            },
        ),
    ]
}

/// Middle value, mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    crate::analysis::quantile_sorted(&v, 0.5)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    let base = base_config(&a.overrides)?;
    base.validate()?;
    let data = load_data(&a.data, base.seed)?;
    let mut out = Outputs::new(&a.run, "ablate")?;
    let mut rows = Vec::new();
    let mut result = Ok(());
    'outer: for (name, spec) in ablation_specs(&base.model) {
        let mut scores = Vec::new();
        for s in 0..a.seeds {
            let cfg = TrainConfig {
                seed: base.seed + s,
                model: spec.clone(),
                ..base.clone()
            };
            match train_into(&mut out, &format!("{name}/seed{}/", cfg.seed), &cfg, &data) {
                Ok(best) => scores.push(best.val_macro_f1),
                Err(e) => {
                    result = Err(e);
                    break 'outer;
                }
            }
        }
        let per_seed: Vec<String> = scores.iter().map(|f| format!("{f:.6}")).collect();
        log::info!("ablate {name}: {}", per_seed.join(" "));
        rows.push(vec![name.to_string(), format!("{:.6}", median(&scores)), per_seed.join(";")]);
    }
    write_csv(&out.path("ablation.csv"), &["config", "median_val_macro_f1", "per_seed"], &rows)?;
    out.finish()?;
    result
}

fn cmd_ensemble(a: EnsembleArgs) -> Result<()> {
    let mut meta_cfg: MetaConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => MetaConfig::default(),
    };
    if let Some(s) = a.seed {
        meta_cfg.seed = s;
    }
    let bases = a
        .checkpoints
        .iter()
        .map(|p| Checkpoint::load(&find_checkpoint(p)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let names: Vec<String> = a.checkpoints.iter().map(|p| p.display().to_string()).collect();
    let data = load_data(&a.data, bases[0].config.seed)?;
    if let Some(c) = bases.iter().find(|c| c.header != data.header) {
        return Err(CliError::Data(format!("checkpoint header {:?} does not match the dataset", c.header)));
    }
    let stacked = collect_probs(&bases, &data.val)?;
    let (meta_train, meta_test) = split_meta(&stacked, a.test_fraction, meta_cfg.seed)?;
    let outcome = train_meta(&meta_train, &meta_test, &meta_cfg)?;
    let mut out = Outputs::new(&a.run, "ensemble")?;
    outcome.meta.save(&out.path("meta"))?;
    write_log(&out.path("meta_log.jsonl"), &outcome.log)?;
    write_stacked(&out.dir, "stacked_val", &stacked, &names)?;
    out.files.extend(["stacked_val.json", "stacked_val.mmeb"].map(String::from));

    let (pred, _) = predict_ensemble(&outcome.meta, &meta_test)?;
    let meta_f1 = crate::analysis::macro_f1(&meta_test.labels, &pred, meta_test.k)?;
    let mut rows: Vec<Vec<String>> = names
        .iter()
        .enumerate()
        .map(|(j, n)| vec![n.clone(), format!("{:.6}", meta_test.base_macro_f1(j))])
        .collect();
    rows.push(vec!["stacked".into(), format!("{meta_f1:.6}")]);
    write_csv(&out.path("ensemble.csv"), &["model", "meta_test_macro_f1"], &rows)?;
    println!("stacked meta-test macro-F1 {meta_f1:.4}");
    out.finish()
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let text = fs::read_to_string(&a.predictions).map_err(|e| CliError::Data(format!("{}: {e}", a.predictions.display())))?;
    let preds: Predictions = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.predictions.display())))?;
    let n = preds.ids.len();
    if [preds.labels.len(), preds.predictions.len(), preds.losses.len()].iter().any(|&l| l != n) {
        return Err(CliError::Data("predictions file has inconsistent lengths".into()));
    }
    let m = Manifest::read(&manifest_path(&a.manifest))?;
    let by_id: std::collections::HashMap<&str, _> = m.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut has_desc = Vec::with_capacity(n);
    let mut lengths = Vec::with_capacity(n);
    for id in &preds.ids {
        let item = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::Data(format!("item {id} missing from {}", a.manifest.display())))?;
        has_desc.push(item.has_description);
        lengths.push(item.text_len);
    }
    let cm = confusion(&preds.labels, &preds.predictions, preds.k)?;
    let group_stats = match group_loss_stats(&preds.losses, &has_desc) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("grouped loss comparison skipped: {e}");
            None
        }
    };
    let report = Report {
        macro_f1: cm.macro_f1(),
        per_class_f1: cm.per_class_f1(),
        top_errors: top_error_types(&cm, a.top),
        group_stats,
        histogram: text_length_histogram(&lengths, a.bucket_width)?,
        ..Report::default()
    };
    let mut out = Outputs::new(&a.run, "analyze")?;
    for p in export_report(&out.dir, &report, &cm)? {
        if let Ok(rel) = p.strip_prefix(&out.dir) {
            out.files.push(rel.to_string_lossy().into_owned());
        }
    }
    println!("macro-F1 {:.4}", report.macro_f1);
    if let Some(g) = &report.group_stats {
        println!(
            "no-description mean loss {:.4} vs description {:.4}: t = {:.4}, dof = {:.2}, one-sided p = {:.4e}",
            g.nodesc.mean, g.desc.mean, g.welch.t, g.welch.dof, g.welch.p_one_sided
        );
    }
    out.finish()
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = gradcheck_suite(a.seed).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut out = Outputs::new(&a.run, "gradcheck")?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                format!("{:.3e}", r.report.max_rel_error),
                r.report.coordinates.to_string(),
                if r.passed() { "pass" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    for r in &rows {
        println!("{:<36} {:>10} {:>6}  {}", r[0], r[1], r[2], r[3]);
    }
    write_csv(&out.path("gradcheck.csv"), &["check", "max_rel_error", "coordinates", "status"], &rows)?;
    out.finish()?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} gradient check(s) exceed {FD_TOLERANCE:e}")));
    }
    Ok(())
}
