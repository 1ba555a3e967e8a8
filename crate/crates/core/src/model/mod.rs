//! The embedding network: convolutional downsampling, transformer encoder,
//! embedding layer and multi-task heads, with exact gradients and a
//! checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod net;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{Ablation, ClassTask, HeadSpec, ModelConfig, RegressionTask, EMBED_DIMS};
pub use loss::{loss, LossBreakdown, Targets, TaskMask};
pub use net::Network;

use crate::features::FeatureChunk;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("every task is masked for this chunk")]
    AllTasksMasked,
    #[error("checkpoint schema version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Mean and standard deviation used to z-normalize one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub mean: f64,
    pub std: f64,
}

impl Default for Norm {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Norm {
    /// From samples; a zero spread is replaced by 1.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Network weights plus the constants frozen alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub net: Network,
    /// Per regression task, in [`RegressionTask::ALL`] order.
    pub target_norm: [Norm; 11],
    /// Scalar normalization of log-mel inputs.
    pub feature_norm: Norm,
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            net: Network::init(&config, seed),
            target_norm: [Norm::default(); 11],
            feature_norm: Norm::default(),
        })
    }

    pub fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        let expected = (self.config.chunk_frames, self.config.n_mels);
        if x.dim() != expected {
            return Err(ModelError::ShapeMismatch {
                got: x.dim(),
                expected,
            });
        }
        Ok(())
    }

    fn normalized_input(&self, x: ArrayView2<f64>) -> ndarray::Array2<f64> {
        let n = self.feature_norm;
        x.mapv(|v| n.normalize(v))
    }

    pub fn forward_matrix(&self, x: ArrayView2<f64>) -> Result<ModelOutput> {
        self.check_input(x)?;
        let (raw, _) = self
            .net
            .forward(&self.config, self.normalized_input(x).view());
        Ok(ModelOutput::from_raw(raw))
    }

    pub fn forward(&self, chunk: &FeatureChunk) -> Result<ModelOutput> {
        self.forward_matrix(chunk.matrix.view())
    }

    /// Loss and its gradient for one chunk, gradients added into `grad`.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        targets: &Targets,
        mask: &TaskMask,
        grad: &mut Network,
    ) -> Result<LossBreakdown> {
        self.check_input(x)?;
        let (raw, cache) = self
            .net
            .forward(&self.config, self.normalized_input(x).view());
        let out = ModelOutput::from_raw(raw);
        let (breakdown, dout) = loss::loss_with_grad(&out, targets, mask, &self.config.heads)?;
        self.net.backward(&self.config, &cache, &dout, grad);
        Ok(breakdown)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Prediction in original units.
    pub fn denormalize(&self, task: RegressionTask, z: f64) -> f64 {
        self.target_norm[task.index()].denormalize(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub embedding: Array1<f64>,
    /// Normalized target space; `None` for a disabled head.
    pub regression: [Option<f64>; 11],
    pub class_logits: [Option<Array1<f64>>; 3],
}

impl ModelOutput {
    fn from_raw(raw: net::RawOutput) -> Self {
        let mut regression = [None; 11];
        for (slot, v) in regression.iter_mut().zip(raw.regression) {
            *slot = v;
        }
        let mut it = raw.logits.into_iter();
        let class_logits = [
            it.next().flatten(),
            it.next().flatten(),
            it.next().flatten(),
        ];
        Self {
            embedding: raw.embedding,
            regression,
            class_logits,
        }
    }

    pub fn predicted_class(&self, task: ClassTask) -> Option<usize> {
        self.class_logits[task.index()].as_ref().map(|l| {
            l.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
    }
}

/// Scalar parameter count from the configuration alone.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let k = cfg.kernel_size;
    let (c, m, f, d) = (cfg.conv_channels, cfg.model_dim, cfg.ff_dim, cfg.embed_dim);
    let conv = c * (k * cfg.n_mels + 1) + m * (k * c + 1);
    let layer = 4 * (m * m + m) + (f * m + f) + (m * f + m) + 4 * m;
    let embed = d * m + d;
    let regression = RegressionTask::ALL
        .iter()
        .filter(|t| cfg.heads.has_regression(**t))
        .count()
        * (d + 1);
    let class: usize = ClassTask::ALL
        .iter()
        .filter(|t| cfg.heads.has_class(**t))
        .map(|t| t.classes() * (d + 1))
        .sum();
    conv + cfg.encoder_layers * layer + 2 * m + embed + regression + class
}
