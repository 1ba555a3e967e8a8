//! Mini-batch training with Adam, per-epoch logging, speaker-disjoint
//! validation, early stopping and evaluation in original units.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::macro_f1;
use crate::features::{self, FeatureError};
use crate::model::{
    self, Ablation, ClassTask, ModelConfig, ModelError, ModelParams, Network, Norm, RegressionTask,
    Targets, TaskMask,
};
use crate::rng::SeededRng;
use crate::synth::{self, ChunkLabel, ManifestEntry, SynthError};

/// Chunks per unit of parallel work; fixed so that gradient sums do not
/// depend on the thread count.
const PIECE: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("manifest has no usable chunks")]
    EmptyManifest,
    #[error("loss became non-finite in epoch {epoch}; last good checkpoint kept")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Linear ramp from 0 over the first `steps` updates.
    LinearWarmup {
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub ablations: Vec<Ablation>,
    pub shuffle: bool,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of speakers held out for validation; 0 trains on everything.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            ablations: Vec::new(),
            shuffle: true,
            patience: 10,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning_rate and adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Model-name suffix, e.g. `XANE-NC`.
    pub fn variant_name(&self) -> String {
        let mut s = String::from("XANE");
        for a in &self.ablations {
            s.push('-');
            s.push_str(&a.short().to_uppercase());
        }
        s
    }
}

/// One feature chunk with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Array2<f64>,
    pub label: ChunkLabel,
    pub utterance_id: String,
    pub speaker_id: String,
    pub chunk_index: usize,
}

/// Raw (unnormalized) regression value of a label, `None` when missing.
pub fn regression_value(label: &ChunkLabel, task: RegressionTask) -> Option<f64> {
    match task {
        RegressionTask::C50 => Some(label.c50_db),
        RegressionTask::T60 => Some(label.t60_ms),
        RegressionTask::Drr => Some(label.drr_db),
        RegressionTask::C5 => Some(label.c5_db),
        RegressionTask::RoomVolume => Some(label.room_volume_m3),
        RegressionTask::ReflectionCoeff => Some(label.reflection_coeff),
        RegressionTask::Pesq => label.pesq,
        RegressionTask::Estoi => label.estoi,
        RegressionTask::Bitrate => Some(label.bitrate_kbps),
        RegressionTask::Snr => label.snr_db,
        RegressionTask::Vad => Some(label.vad_fraction),
    }
    .filter(|v| v.is_finite())
}

pub fn class_value(label: &ChunkLabel, task: ClassTask) -> usize {
    match task {
        ClassTask::Noise => label.noise_class.index(),
        ClassTask::Codec => label.codec_class.index(),
        ClassTask::Overlap => label.overlap as usize,
    }
}

pub fn targets(label: &ChunkLabel, norm: &[Norm; 11]) -> Targets {
    let mut t = Targets::default();
    for task in RegressionTask::ALL {
        t.regression[task.index()] =
            regression_value(label, task).map(|v| norm[task.index()].normalize(v));
    }
    for task in ClassTask::ALL {
        t.classes[task.index()] = Some(class_value(label, task));
    }
    t
}

/// Features and labels for every chunk of every entry, in manifest order.
pub fn load_samples(entries: &[ManifestEntry], manifest_dir: &Path) -> Result<Vec<Sample>> {
    let per_entry = entries
        .par_iter()
        .map(|e| -> Result<Vec<Sample>> {
            let audio = synth::load_entry_audio(e, manifest_dir)?;
            let chunks = features::extract_chunks(&audio, &e.utterance_id)?;
            Ok(chunks
                .into_iter()
                .zip(&e.chunk_labels)
                .map(|(c, (idx, label))| Sample {
                    x: c.matrix,
                    label: *label,
                    utterance_id: e.utterance_id.clone(),
                    speaker_id: e.speaker_id.clone(),
                    chunk_index: *idx,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_entry.into_iter().flatten().collect())
}

/// Speaker-disjoint train/validation partition by target speaker.
pub fn validation_split(
    samples: Vec<Sample>,
    fraction: f64,
    seed: u64,
) -> (Vec<Sample>, Vec<Sample>) {
    if fraction <= 0.0 {
        return (samples, Vec::new());
    }
    let mut speakers: Vec<String> = samples
        .iter()
        .map(|s| s.speaker_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    SeededRng::for_label(seed, "validation").shuffle(&mut speakers);
    let n_val = ((speakers.len() as f64 * fraction).round() as usize)
        .clamp(1, speakers.len().saturating_sub(1).max(1));
    if speakers.len() < 2 {
        return (samples, Vec::new());
    }
    let val: BTreeSet<String> = speakers[..n_val].iter().cloned().collect();
    samples
        .into_iter()
        .partition(|s| !val.contains(&s.speaker_id))
}

/// Per-task normalization from the training samples.
pub fn fit_target_norm(samples: &[Sample]) -> [Norm; 11] {
    let mut out = [Norm::default(); 11];
    for task in RegressionTask::ALL {
        out[task.index()] = Norm::fit(
            samples
                .iter()
                .filter_map(|s| regression_value(&s.label, task)),
        );
    }
    out
}

pub fn fit_feature_norm(samples: &[Sample]) -> Norm {
    Norm::fit(samples.iter().flat_map(|s| s.x.iter().copied()))
}

/// Mean losses over a set of chunks; per-task means only over chunks
/// where the task was active.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossMeans {
    pub total: f64,
    pub regression: [Option<f64>; 11],
    pub classification: [Option<f64>; 3],
}

/// Running sums behind [`LossMeans`].
#[derive(Debug, Default, Clone)]
pub struct LossSums {
    total: f64,
    count: usize,
    reg: [(f64, usize); 11],
    class: [(f64, usize); 3],
}

impl LossSums {
    fn add(&mut self, b: &model::LossBreakdown) {
        self.total += b.total;
        self.count += 1;
        for (s, v) in self.reg.iter_mut().zip(&b.regression) {
            if let Some(v) = v {
                s.0 += v;
                s.1 += 1;
            }
        }
        for (s, v) in self.class.iter_mut().zip(&b.classification) {
            if let Some(v) = v {
                s.0 += v;
                s.1 += 1;
            }
        }
    }

    fn merge(&mut self, o: &LossSums) {
        self.total += o.total;
        self.count += o.count;
        for (a, b) in self.reg.iter_mut().zip(&o.reg) {
            a.0 += b.0;
            a.1 += b.1;
        }
        for (a, b) in self.class.iter_mut().zip(&o.class) {
            a.0 += b.0;
            a.1 += b.1;
        }
    }

    pub fn means(&self) -> LossMeans {
        let m = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let mut out = LossMeans {
            total: self.total / self.count.max(1) as f64,
            ..LossMeans::default()
        };
        for i in 0..11 {
            out.regression[i] = m(self.reg[i]);
        }
        for i in 0..3 {
            out.classification[i] = m(self.class[i]);
        }
        out
    }
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradient(params: &ModelParams, batch: &[&Sample]) -> Result<(LossSums, Network)> {
    let pieces = batch
        .par_chunks(PIECE)
        .map(|piece| -> Result<(LossSums, Network)> {
            let mut grad = Network::zeros(&params.config);
            let mut sums = LossSums::default();
            for s in piece {
                let t = targets(&s.label, &params.target_norm);
                let b = params.loss_and_grad(s.x.view(), &t, &TaskMask::default(), &mut grad)?;
                sums.add(&b);
            }
            Ok((sums, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = pieces.into_iter();
    let (mut sums, mut grad) = it.next().ok_or(TrainError::EmptyManifest)?;
    for (s, g) in it {
        sums.merge(&s);
        grad.add_scaled(&g, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.visit_mut(&mut |_, t| t.iter_mut().for_each(|v| *v *= scale));
    Ok((sums, grad))
}

/// Losses over `samples` without gradients.
pub fn mean_loss(params: &ModelParams, samples: &[Sample]) -> Result<LossMeans> {
    let pieces = samples
        .par_chunks(PIECE)
        .map(|piece| -> Result<LossSums> {
            let mut sums = LossSums::default();
            for s in piece {
                let out = params.forward_matrix(s.x.view())?;
                let t = targets(&s.label, &params.target_norm);
                sums.add(&model::loss(
                    &out,
                    &t,
                    &TaskMask::default(),
                    &params.config.heads,
                )?);
            }
            Ok(sums)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = LossSums::default();
    for p in &pieces {
        total.merge(p);
    }
    Ok(total.means())
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Network, cfg: &TrainConfig) -> Self {
        let n = params.param_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn update(&mut self, params: &mut Network, grad: &Network, lr: f64) {
        let mut g = Vec::with_capacity(self.m.len());
        grad.visit(&mut |_, _, t| g.extend_from_slice(t));
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut i = 0;
        params.visit_mut(&mut |_, t| {
            for p in t.iter_mut() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                *p -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                i += 1;
            }
        });
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.learning_rate,
        LrSchedule::LinearWarmup { steps } if steps > 0 => {
            cfg.learning_rate * ((step + 1) as f64 / steps as f64).min(1.0)
        }
        LrSchedule::LinearWarmup { .. } => cfg.learning_rate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossMeans,
    pub val: Option<LossMeans>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
    pub train_chunks: usize,
    pub val_chunks: usize,
}

/// Column names of the per-epoch log for the enabled heads.
pub fn log_columns(config: &ModelConfig) -> Vec<String> {
    let mut cols = vec![
        "epoch".into(),
        "lr".into(),
        "train_loss".into(),
        "val_loss".into(),
    ];
    for t in RegressionTask::ALL {
        if config.heads.has_regression(t) {
            cols.push(format!("train_{}_mse", t.name()));
        }
    }
    for t in ClassTask::ALL {
        if config.heads.has_class(t) {
            cols.push(format!("train_{}_ce", t.name()));
        }
    }
    cols
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn log_row(config: &ModelConfig, e: &EpochLog) -> String {
    let mut cells = vec![
        e.epoch.to_string(),
        format!("{}", e.lr),
        format!("{}", e.train.total),
        fmt_opt(e.val.as_ref().map(|v| v.total)),
    ];
    for t in RegressionTask::ALL {
        if config.heads.has_regression(t) {
            cells.push(fmt_opt(e.train.regression[t.index()]));
        }
    }
    for t in ClassTask::ALL {
        if config.heads.has_class(t) {
            cells.push(fmt_opt(e.train.classification[t.index()]));
        }
    }
    cells.join(",")
}

/// Core loop on prepared samples. With `out_dir`, writes `best.ckpt`,
/// `last.ckpt` and `metrics.csv` there.
pub fn train_samples(
    train: &[Sample],
    val: &[Sample],
    model_config: ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let model_config = model_config.with_ablations(&cfg.ablations);
    let mut params = ModelParams::init(model_config, cfg.seed)?;
    params.target_norm = fit_target_norm(train);
    params.feature_norm = fit_feature_norm(train);
    let mut adam = Adam::new(&params.net, cfg);

    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.csv"))?);
            writeln!(f, "{}", log_columns(&model_config).join(","))?;
            Some(f)
        }
        None => None,
    };
    let meta = |epoch: usize| {
        let mut m = BTreeMap::new();
        m.insert("epoch".to_string(), serde_json::json!(epoch));
        m.insert("seed".to_string(), serde_json::json!(cfg.seed));
        m.insert("variant".to_string(), serde_json::json!(cfg.variant_name()));
        m
    };

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
        stopped_early: false,
        train_chunks: train.len(),
        val_chunks: val.len(),
    };
    let mut best_params = params.clone();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order = (0..train.len()).collect();
            SeededRng::for_label(cfg.seed, &format!("shuffle/{epoch}")).shuffle(&mut order);
        }
        let mut sums = LossSums::default();
        let mut lr = cfg.learning_rate;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = batch_idx.iter().map(|&i| &train[i]).collect();
            let (s, grad) = batch_gradient(&params, &batch)?;
            if !s.total.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            sums.merge(&s);
            lr = learning_rate(cfg, adam.steps());
            adam.update(&mut params.net, &grad, lr);
        }
        let train_means = sums.means();
        let val_means = if val.is_empty() {
            None
        } else {
            Some(mean_loss(&params, val)?)
        };
        let log = EpochLog {
            epoch,
            lr,
            train: train_means,
            val: val_means,
        };
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", log_row(&model_config, &log))?;
            f.flush()?;
        }
        log::info!(
            "epoch {epoch}: train {:.5} val {}",
            log.train.total,
            fmt_opt(log.val.as_ref().map(|v| v.total))
        );
        let monitored = log.val.as_ref().map(|v| v.total).unwrap_or(log.train.total);
        report.epochs.push(log);
        if !monitored.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        if monitored < report.best_loss {
            report.best_loss = monitored;
            report.best_epoch = epoch;
            best_params = params.clone();
            since_best = 0;
            if let Some(dir) = out_dir {
                model::save_checkpoint(&best_params, meta(epoch), &dir.join("best.ckpt"))?;
            }
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience && !val.is_empty() {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some(dir) = out_dir {
        let last = report.epochs.last().map(|e| e.epoch).unwrap_or(0);
        model::save_checkpoint(&params, meta(last), &dir.join("last.ckpt"))?;
    }
    Ok((best_params, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSnapshot<'a> {
    pub manifest: &'a Path,
    pub model: ModelConfig,
    pub train: &'a TrainConfig,
    pub variant: String,
    pub train_chunks: usize,
    pub val_chunks: usize,
    pub val_speakers: Vec<String>,
    pub checkpoint_version: u32,
    pub manifest_version: u32,
}

/// Loads the manifest, splits, trains and writes everything to `out_dir`:
/// `best.ckpt`, `last.ckpt`, `metrics.csv`, `run_config.json`.
pub fn train(
    manifest: &Path,
    model_config: ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    let entries = synth::read_manifest(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let samples = load_samples(&entries, dir)?;
    if samples.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let (train, val) = validation_split(samples, cfg.val_fraction, cfg.seed);
    let val_speakers: Vec<String> = val
        .iter()
        .map(|s| s.speaker_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    std::fs::create_dir_all(out_dir)?;
    let snapshot = RunSnapshot {
        manifest,
        model: model_config.with_ablations(&cfg.ablations),
        train: cfg,
        variant: cfg.variant_name(),
        train_chunks: train.len(),
        val_chunks: val.len(),
        val_speakers,
        checkpoint_version: model::CHECKPOINT_VERSION,
        manifest_version: synth::MANIFEST_VERSION,
    };
    std::fs::write(
        out_dir.join("run_config.json"),
        serde_json::to_string_pretty(&snapshot).expect("serializable"),
    )?;
    train_samples(&train, &val, model_config, cfg, Some(out_dir))
}

/// Per-task metrics: MAE in original units and macro-F1.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub mae: [Option<f64>; 11],
    pub f1: [Option<f64>; 3],
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub regression: [Option<f64>; 11],
    pub classes: [Option<usize>; 3],
}

/// Denormalized predictions for every sample.
pub fn predict(params: &ModelParams, samples: &[Sample]) -> Result<Vec<Prediction>> {
    samples
        .par_iter()
        .map(|s| -> Result<Prediction> {
            let out = params.forward_matrix(s.x.view())?;
            let mut regression = [None; 11];
            for t in RegressionTask::ALL {
                regression[t.index()] = out.regression[t.index()].map(|z| params.denormalize(t, z));
            }
            let mut classes = [None; 3];
            for t in ClassTask::ALL {
                classes[t.index()] = out.predicted_class(t);
            }
            Ok(Prediction {
                regression,
                classes,
            })
        })
        .collect()
}

/// Metrics of `predictions` against the labels. Heads missing from the
/// predictions yield `None`, never zero.
pub fn score(samples: &[Sample], predictions: &[Prediction]) -> EvalMetrics {
    let mut mae = [None; 11];
    for t in RegressionTask::ALL {
        let errs: Vec<f64> = samples
            .iter()
            .zip(predictions)
            .filter_map(|(s, p)| {
                Some((p.regression[t.index()]? - regression_value(&s.label, t)?).abs())
            })
            .collect();
        let head_present = predictions
            .iter()
            .any(|p| p.regression[t.index()].is_some());
        if head_present && !errs.is_empty() {
            mae[t.index()] = Some(errs.iter().sum::<f64>() / errs.len() as f64);
        }
    }
    let mut f1 = [None; 3];
    for t in ClassTask::ALL {
        let pairs: Option<Vec<(usize, usize)>> = samples
            .iter()
            .zip(predictions)
            .map(|(s, p)| Some((class_value(&s.label, t), p.classes[t.index()]?)))
            .collect();
        if let Some(pairs) = pairs.filter(|p| !p.is_empty()) {
            let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            f1[t.index()] = Some(macro_f1(&truth, &pred, t.classes()));
        }
    }
    EvalMetrics {
        mae,
        f1,
        chunks: samples.len(),
    }
}

pub fn evaluate_samples(params: &ModelParams, samples: &[Sample]) -> Result<EvalMetrics> {
    Ok(score(samples, &predict(params, samples)?))
}

pub fn evaluate(checkpoint: &Path, manifest: &Path) -> Result<EvalMetrics> {
    let (params, _) = model::load_checkpoint(checkpoint)?;
    let entries = synth::read_manifest(manifest)?;
    let samples = load_samples(&entries, manifest.parent().unwrap_or(Path::new(".")))?;
    if samples.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    evaluate_samples(&params, &samples)
}

/// Units used in the metrics CSV header.
fn unit(t: RegressionTask) -> &'static str {
    match t {
        RegressionTask::C50 | RegressionTask::Drr | RegressionTask::C5 | RegressionTask::Snr => {
            "db"
        }
        RegressionTask::T60 => "ms",
        RegressionTask::RoomVolume => "m3",
        RegressionTask::Bitrate => "kbps",
        _ => "",
    }
}

pub fn metrics_header() -> Vec<String> {
    let mut cols: Vec<String> = RegressionTask::ALL
        .iter()
        .map(|t| match unit(*t) {
            "" => format!("{}_mae", t.name()),
            u => format!("{}_mae_{u}", t.name()),
        })
        .collect();
    cols.extend(ClassTask::ALL.iter().map(|t| format!("{}_f1", t.name())));
    cols.push("chunks".into());
    cols
}

/// Header plus one row, Table-1 order; absent metrics are empty cells.
pub fn metrics_csv(m: &EvalMetrics) -> String {
    let mut cells: Vec<String> = m.mae.iter().map(|v| fmt_opt(*v)).collect();
    cells.extend(m.f1.iter().map(|v| fmt_opt(*v)));
    cells.push(m.chunks.to_string());
    format!("{}\n{}\n", metrics_header().join(","), cells.join(","))
}

pub fn write_metrics(path: &Path, m: &EvalMetrics) -> Result<PathBuf> {
    std::fs::write(path, metrics_csv(m))?;
    Ok(path.to_path_buf())
}
