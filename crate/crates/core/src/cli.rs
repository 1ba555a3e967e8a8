//! The `xane` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degrade::NoiseClass;
use crate::eval::{self, EvalError, Filter, LabelField, TsneConfig, VectorEncoding};
use crate::model::{self, Ablation, ModelConfig, ModelError};
use crate::synth::{self, SynthConfig, SynthError};
use crate::train::{self, TrainConfig, TrainError};
use crate::{features, rir, speech};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => CliError::Usage(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Synth(s) => s.into(),
            TrainError::Model(m) => m.into(),
            _ => data(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::SingleLabel { .. }
            | EvalError::InvalidK { .. }
            | EvalError::KMismatch { .. }
            | EvalError::PerplexityTooLarge { .. }
            | EvalError::TooManyPoints(_)
            | EvalError::Filter(_)
            | EvalError::UnknownSpeaker(_)
            | EvalError::TooFewSpeakers(_) => CliError::Usage(e.to_string()),
            EvalError::Model(m) => m.into(),
            EvalError::Synth(s) => s.into(),
            _ => data(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        data(e)
    }
}

/// Contents of a `--config` file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub tsne: TsneConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "xane",
    about = "Background-acoustics embeddings: corpus synthesis, training and evaluation"
)]
#[command(disable_version_flag = true)]
pub struct Cli {
    /// Print the program version and every file-format schema version.
    #[arg(long, short = 'V')]
    pub version: bool,
    /// TOML file with `seed`, `jobs`, `[synth]`, `[train]` and `[tsne]`; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a degraded corpus and its manifest.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Per-task MAE and macro-F1 of a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Write utterance embeddings of a manifest to a dump.
    Embed(EmbedArgs),
    /// k-means F1 of dump vectors against one label.
    Cluster(ClusterArgs),
    /// Two-dimensional t-SNE coordinates of dump vectors.
    Project(ProjectArgs),
    /// Cosine distances from one speaker to every other speaker in a dump.
    Cosine(CosineArgs),
    /// Generate a synthetic clean-speech directory.
    GenSpeech(GenSpeechArgs),
    /// Speaker-disjoint train/test split of a manifest.
    Split(SplitArgs),
    /// Merge externally computed PESQ/ESTOI values into a manifest.
    JoinLabels(JoinLabelsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub clean_dir: PathBuf,
    /// Directory with `<class>/*.wav` noise files.
    #[arg(long, conflicts_with = "builtin_noise")]
    pub noise_dir: Option<PathBuf>,
    /// Use the built-in noise generators (the default without --noise-dir).
    #[arg(long)]
    pub builtin_noise: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_group: Option<usize>,
    /// Comma-separated group ids in 1..=6.
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<u8>>,
    /// Comma-separated noise classes.
    #[arg(long, value_delimiter = ',')]
    pub noise_classes: Option<Vec<String>>,
    #[arg(long)]
    pub dry_fraction: Option<f64>,
    #[arg(long)]
    pub keep_stems: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub embed_dim: usize,
    /// Heads to drop: nn, nc, no (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Vector encoding: decimal or base64.
    #[arg(long, default_value = "decimal")]
    pub encoding: String,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub dump: PathBuf,
    /// noise, reverb or overlap.
    #[arg(long)]
    pub label: String,
    /// e.g. `snr>20,codec==uncompressed`.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CosineArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub reference_speaker: String,
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSpeechArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    #[arg(long, default_value_t = 4)]
    pub per_speaker: usize,
    #[arg(long, default_value_t = 2.0)]
    pub min_duration: f64,
    #[arg(long, default_value_t = 4.0)]
    pub max_duration: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct JoinLabelsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV with `utterance_id,chunk_index,pesq,estoi`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn version_text() -> String {
    format!(
        "xane {}\nmanifest schema {}\ncheckpoint schema {}\nembedding dump schema {}\nfeature cache schema {}\nrir sidecar schema {}\n",
        env!("CARGO_PKG_VERSION"),
        synth::MANIFEST_VERSION,
        model::CHECKPOINT_VERSION,
        eval::DUMP_VERSION,
        features::CACHE_VERSION,
        rir::SIDECAR_SCHEMA_VERSION,
    )
}

/// Resolved settings of one invocation. Output paths are left out so that
/// identical runs into different directories produce identical snapshots.
#[derive(Serialize)]
struct Snapshot<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    settings: T,
}

fn write_snapshot<T: Serialize>(path: &Path, command: &str, seed: u64, settings: T) -> Result<()> {
    let s = Snapshot {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        settings,
    };
    let text =
        serde_json::to_string_pretty(&s).map_err(|e| CliError::Internal(e.to_string()))? + "\n";
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// `report.csv` -> `report.config.json`.
fn sibling_snapshot(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.config.json"))
}

fn parent_dir(p: &Path) -> &Path {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_filtered(dump: &Path, filter: Option<&str>) -> Result<Vec<eval::EmbeddingRecord>> {
    let (_, records) = eval::read_dump(dump)?;
    let filter = Filter::parse(filter.unwrap_or(""))?;
    let kept = filter.apply(&records);
    log::info!(
        "{} of {} records pass the filter",
        kept.len(),
        records.len()
    );
    Ok(kept)
}

/// Paths in `entries` are relative to `from`; rewrites them for a manifest
/// stored in `to`.
fn rebase(entries: &mut [synth::ManifestEntry], from: &Path, to: &Path) {
    if from == to {
        return;
    }
    for e in entries.iter_mut() {
        let abs = from.join(&e.wav_path);
        let abs = std::fs::canonicalize(&abs).unwrap_or(abs);
        e.wav_path = abs.display().to_string();
    }
}

#[derive(Serialize)]
struct SynthSettings<'a> {
    clean_dir: &'a Path,
    noise_dir: Option<&'a Path>,
    synth: &'a SynthConfig,
}

fn cmd_synth(a: &SynthArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let mut cfg = file.synth.clone();
    if let Some(n) = a.per_group {
        cfg.utterances_per_group = n;
    }
    if let Some(g) = &a.groups {
        cfg.groups = g.clone();
    }
    if let Some(classes) = &a.noise_classes {
        cfg.noise_classes = classes
            .iter()
            .map(|c| {
                NoiseClass::parse(c)
                    .ok_or_else(|| CliError::Usage(format!("unknown noise class {c:?}")))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(d) = a.dry_fraction {
        cfg.dry_fraction = d;
    }
    cfg.keep_stems |= a.keep_stems;
    cfg.validate()?;
    let bank = match &a.noise_dir {
        Some(d) => crate::degrade::NoiseBank::from_dir(d).map_err(data)?,
        None => crate::degrade::NoiseBank::builtin(),
    };
    std::fs::create_dir_all(&a.out)?;
    write_snapshot(
        &a.out.join("synth_config.json"),
        "synth",
        seed,
        SynthSettings {
            clean_dir: &a.clean_dir,
            noise_dir: a.noise_dir.as_deref(),
            synth: &cfg,
        },
    )?;
    let entries = synth::synthesize_corpus(&a.clean_dir, &bank, &cfg, seed, &a.out)?;
    println!(
        "{} utterances -> {}",
        entries.len(),
        a.out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs, file: &FileConfig, seed: u64) -> Result<(ModelConfig, TrainConfig)> {
    let mut cfg = file.train.clone();
    cfg.seed = seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.val_fraction {
        cfg.val_fraction = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if !a.ablate.is_empty() {
        cfg.ablations = a
            .ablate
            .iter()
            .map(|s| {
                Ablation::parse(s).ok_or_else(|| {
                    CliError::Usage(format!("unknown ablation {s:?}; use nn, nc or no"))
                })
            })
            .collect::<Result<_>>()?;
    }
    cfg.validate()?;
    let model = ModelConfig::for_embed_dim(a.embed_dim)?;
    Ok((model, cfg))
}

fn cmd_train(a: &TrainArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let (model_cfg, cfg) = train_config(a, file, seed)?;
    std::fs::create_dir_all(&a.out)?;
    write_snapshot(
        &a.out.join("train_config.json"),
        "train",
        seed,
        serde_json::json!({"manifest": &a.manifest, "embed_dim": a.embed_dim, "train": &cfg}),
    )?;
    let (params, report) = train::train(&a.manifest, model_cfg, &cfg, &a.out)?;
    println!(
        "{}: {} parameters, best epoch {} -> {}",
        cfg.variant_name(),
        params.param_count(),
        report.best_epoch,
        a.out.join("best.ckpt").display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let metrics = train::evaluate(&a.checkpoint, &a.manifest)?;
    write_file(&a.out, &train::metrics_csv(&metrics))?;
    write_snapshot(
        &sibling_snapshot(&a.out),
        "eval",
        seed,
        serde_json::json!({"checkpoint": &a.checkpoint, "manifest": &a.manifest}),
    )?;
    print!("{}", train::metrics_csv(&metrics));
    Ok(())
}

fn cmd_embed(a: &EmbedArgs, seed: u64) -> Result<()> {
    let encoding = match a.encoding.as_str() {
        "decimal" => VectorEncoding::Decimal,
        "base64" => VectorEncoding::Base64,
        other => return Err(CliError::Usage(format!("unknown encoding {other:?}"))),
    };
    let (params, header) = model::load_checkpoint(&a.checkpoint)?;
    let entries = synth::read_manifest(&a.manifest)?;
    let records = eval::embed_corpus(&params, &entries, parent_dir(&a.manifest))?;
    let source = header
        .metadata
        .get("variant")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("XANE-{}", params.config.embed_dim));
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    eval::write_dump(&a.out, &records, &source, encoding)?;
    write_snapshot(
        &sibling_snapshot(&a.out),
        "embed",
        seed,
        serde_json::json!({"checkpoint": &a.checkpoint, "manifest": &a.manifest, "encoding": &a.encoding}),
    )?;
    println!("{} records -> {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_cluster(a: &ClusterArgs, seed: u64) -> Result<()> {
    let field = LabelField::parse(&a.label).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown label {:?}; use noise, reverb or overlap",
            a.label
        ))
    })?;
    let records = load_filtered(&a.dump, a.filter.as_deref())?;
    let k = eval::distinct_labels(&records, field).len();
    let report = eval::kmeans_f1(&records, field, k, seed)?;
    write_file(&a.out, &eval::cluster_report_csv(&report))?;
    write_snapshot(
        &sibling_snapshot(&a.out),
        "cluster",
        seed,
        serde_json::json!({"dump": &a.dump, "label": &a.label, "filter": &a.filter}),
    )?;
    println!("{} k={} macro F1 {:.4}", report.task, report.k, report.f1);
    Ok(())
}

fn cmd_project(a: &ProjectArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let mut cfg = file.tsne;
    cfg.seed = seed;
    if let Some(p) = a.perplexity {
        cfg.perplexity = p;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    let records = load_filtered(&a.dump, a.filter.as_deref())?;
    let points: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    let coords = eval::tsne(&points, &cfg)?;
    write_file(&a.out, &eval::projection_csv(&records, &coords))?;
    write_snapshot(
        &sibling_snapshot(&a.out),
        "project",
        seed,
        serde_json::json!({"dump": &a.dump, "filter": &a.filter, "tsne": cfg}),
    )?;
    println!("{} points -> {}", coords.len(), a.out.display());
    Ok(())
}

fn cmd_cosine(a: &CosineArgs, seed: u64) -> Result<()> {
    let records = load_filtered(&a.dump, a.filter.as_deref())?;
    let rep = eval::cosine_distance_report(&records, &a.reference_speaker)?;
    let mut csv = String::from("reference_speaker,speaker,cosine_distance\n");
    for (spk, d) in &rep.distances {
        csv.push_str(&format!("{},{spk},{d}\n", rep.reference_speaker));
    }
    write_file(&a.out, &csv)?;
    write_snapshot(
        &sibling_snapshot(&a.out),
        "cosine",
        seed,
        serde_json::json!({"dump": &a.dump, "reference_speaker": &a.reference_speaker, "filter": &a.filter}),
    )?;
    println!(
        "mean {:.4} std {:.4} over {} speakers",
        rep.mean,
        rep.std,
        rep.distances.len()
    );
    Ok(())
}

fn cmd_gen_speech(a: &GenSpeechArgs, seed: u64) -> Result<()> {
    if a.speakers == 0 || a.per_speaker == 0 {
        return Err(CliError::Usage(
            "--speakers and --per-speaker must be positive".into(),
        ));
    }
    if !(a.min_duration >= 1.0 && a.max_duration >= a.min_duration) {
        return Err(CliError::Usage(
            "durations must satisfy 1 <= min <= max".into(),
        ));
    }
    let paths = speech::generate_corpus(
        &a.out,
        a.speakers,
        a.per_speaker,
        (a.min_duration, a.max_duration),
        seed,
    )
    .map_err(data)?;
    write_snapshot(
        &a.out.join("gen_speech_config.json"),
        "gen-speech",
        seed,
        serde_json::json!({"speakers": a.speakers, "per_speaker": a.per_speaker, "min_duration": a.min_duration, "max_duration": a.max_duration}),
    )?;
    println!("{} utterances -> {}", paths.len(), a.out.display());
    Ok(())
}

fn cmd_split(a: &SplitArgs, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(CliError::Usage("--test-fraction must lie in [0, 1)".into()));
    }
    let entries = synth::read_manifest(&a.manifest)?;
    let mut split = synth::split_by_speaker(&entries, a.test_fraction, seed);
    let from = parent_dir(&a.manifest);
    rebase(&mut split.train, from, parent_dir(&a.train_out));
    rebase(&mut split.test, from, parent_dir(&a.test_out));
    for (path, part) in [(&a.train_out, &split.train), (&a.test_out, &split.test)] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        synth::write_manifest(path, part)?;
    }
    write_snapshot(
        &sibling_snapshot(&a.train_out),
        "split",
        seed,
        serde_json::json!({"manifest": &a.manifest, "test_fraction": a.test_fraction, "test_speakers": &split.test_speakers}),
    )?;
    println!(
        "train {} test {} dropped {} (test speakers: {})",
        split.train.len(),
        split.test.len(),
        split.dropped,
        split.test_speakers.join(" ")
    );
    Ok(())
}

fn cmd_join_labels(a: &JoinLabelsArgs, seed: u64) -> Result<()> {
    let mut entries = synth::read_manifest(&a.manifest)?;
    let csv = std::fs::read_to_string(&a.labels)?;
    let n = synth::join_labels(&mut entries, &csv)?;
    rebase(&mut entries, parent_dir(&a.manifest), parent_dir(&a.out));
    synth::write_manifest(&a.out, &entries)?;
    write_snapshot(
        &sibling_snapshot(&a.out),
        "join-labels",
        seed,
        serde_json::json!({"manifest": &a.manifest, "labels": &a.labels}),
    )?;
    println!("{n} chunk labels updated -> {}", a.out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.version {
        print!("{}", version_text());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(CliError::Usage("no subcommand given; see --help".into()));
    };
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        // Fails only when a pool already exists, e.g. a second call in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let flag_seed = match command {
        Command::Synth(a) => a.seed,
        Command::Train(a) => a.seed,
        Command::Cluster(a) => a.seed,
        Command::Project(a) => a.seed,
        Command::GenSpeech(a) => a.seed,
        Command::Split(a) => a.seed,
        Command::Eval(_) | Command::Embed(_) | Command::Cosine(_) | Command::JoinLabels(_) => None,
    };
    let seed = flag_seed.or(file.seed).unwrap_or(0);
    match command {
        Command::Synth(a) => cmd_synth(a, &file, seed),
        Command::Train(a) => cmd_train(a, &file, seed),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Embed(a) => cmd_embed(a, seed),
        Command::Cluster(a) => cmd_cluster(a, seed),
        Command::Project(a) => cmd_project(a, &file, seed),
        Command::Cosine(a) => cmd_cosine(a, seed),
        Command::GenSpeech(a) => cmd_gen_speech(a, seed),
        Command::Split(a) => cmd_split(a, seed),
        Command::JoinLabels(a) => cmd_join_labels(a, seed),
    }
}

/// Parses `std::env::args`, runs, and maps errors and panics to exit codes.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => {
            eprintln!("error: internal invariant violated");
            ExitCode::from(4)
        }
    }
}
