use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::features::{CHUNK_FRAMES, N_MELS};

/// Regression targets in metrics-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionTask {
    C50,
    T60,
    Drr,
    C5,
    RoomVolume,
    ReflectionCoeff,
    Pesq,
    Estoi,
    Bitrate,
    Snr,
    Vad,
}

impl RegressionTask {
    pub const ALL: [RegressionTask; 11] = [
        RegressionTask::C50,
        RegressionTask::T60,
        RegressionTask::Drr,
        RegressionTask::C5,
        RegressionTask::RoomVolume,
        RegressionTask::ReflectionCoeff,
        RegressionTask::Pesq,
        RegressionTask::Estoi,
        RegressionTask::Bitrate,
        RegressionTask::Snr,
        RegressionTask::Vad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RegressionTask::C50 => "c50",
            RegressionTask::T60 => "t60",
            RegressionTask::Drr => "drr",
            RegressionTask::C5 => "c5",
            RegressionTask::RoomVolume => "room_volume",
            RegressionTask::ReflectionCoeff => "reflection_coeff",
            RegressionTask::Pesq => "pesq",
            RegressionTask::Estoi => "estoi",
            RegressionTask::Bitrate => "bitrate",
            RegressionTask::Snr => "snr",
            RegressionTask::Vad => "vad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassTask {
    Noise,
    Codec,
    Overlap,
}

impl ClassTask {
    pub const ALL: [ClassTask; 3] = [ClassTask::Noise, ClassTask::Codec, ClassTask::Overlap];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn classes(self) -> usize {
        match self {
            ClassTask::Noise => 5,
            ClassTask::Codec => 3,
            ClassTask::Overlap => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassTask::Noise => "noise",
            ClassTask::Codec => "codec",
            ClassTask::Overlap => "overlap",
        }
    }
}

/// Removal of one classification objective together with its head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoNoiseHead,
    NoCodecHead,
    NoOverlapHead,
}

impl Ablation {
    pub fn task(self) -> ClassTask {
        match self {
            Ablation::NoNoiseHead => ClassTask::Noise,
            Ablation::NoCodecHead => ClassTask::Codec,
            Ablation::NoOverlapHead => ClassTask::Overlap,
        }
    }

    /// Short flag form: `nn`, `nc`, `no`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nn" => Some(Ablation::NoNoiseHead),
            "nc" => Some(Ablation::NoCodecHead),
            "no" => Some(Ablation::NoOverlapHead),
            _ => None,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Ablation::NoNoiseHead => "nn",
            Ablation::NoCodecHead => "nc",
            Ablation::NoOverlapHead => "no",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub regression: [bool; 11],
    pub classification: [bool; 3],
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            regression: [true; 11],
            classification: [true; 3],
        }
    }
}

impl HeadSpec {
    pub fn with_ablations(ablations: &[Ablation]) -> Self {
        let mut spec = Self::default();
        for a in ablations {
            spec.classification[a.task().index()] = false;
        }
        spec
    }

    pub fn has_regression(&self, t: RegressionTask) -> bool {
        self.regression[t.index()]
    }

    pub fn has_class(&self, t: ClassTask) -> bool {
        self.classification[t.index()]
    }
}

/// Architecture hyperparameters.
///
/// Two stride-2 convolutions over time (kernel 3, padding 1), sinusoidal
/// positions, pre-norm encoder layers with a final layer norm, temporal
/// mean pooling, then the GELU embedding layer and the task heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub conv_channels: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub attn_heads: usize,
    pub kernel_size: usize,
    pub n_mels: usize,
    pub chunk_frames: usize,
    pub heads: HeadSpec,
}

pub const EMBED_DIMS: [usize; 5] = [32, 64, 128, 256, 512];

impl ModelConfig {
    /// Width scaling for the supported embedding sizes: convolution and
    /// feed-forward widths are `2 * embed_dim`; the attention width is
    /// `max(256, 3 * embed_dim / 2)`. At 128 this is 256 everywhere.
    pub fn for_embed_dim(embed_dim: usize) -> Result<Self> {
        if !EMBED_DIMS.contains(&embed_dim) {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim {embed_dim} not in {EMBED_DIMS:?}"
            )));
        }
        Ok(Self {
            embed_dim,
            conv_channels: 2 * embed_dim,
            model_dim: (3 * embed_dim / 2).max(256),
            ff_dim: 2 * embed_dim,
            encoder_layers: 2,
            attn_heads: 8,
            kernel_size: 3,
            n_mels: N_MELS,
            chunk_frames: CHUNK_FRAMES,
            heads: HeadSpec::default(),
        })
    }

    /// Small network on 10 x 8 inputs for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 32,
            conv_channels: 12,
            model_dim: 16,
            ff_dim: 16,
            encoder_layers: 1,
            attn_heads: 8,
            kernel_size: 3,
            n_mels: 8,
            chunk_frames: 10,
            heads: HeadSpec::default(),
        }
    }

    pub fn with_ablations(mut self, ablations: &[Ablation]) -> Self {
        self.heads = HeadSpec::with_ablations(ablations);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.embed_dim,
            self.conv_channels,
            self.model_dim,
            self.ff_dim,
            self.attn_heads,
            self.kernel_size,
            self.n_mels,
            self.chunk_frames,
        ];
        if positive.contains(&0) {
            return Err(ModelError::InvalidConfig("zero-sized dimension".into()));
        }
        if !self.model_dim.is_multiple_of(self.attn_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.attn_heads
            )));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig("kernel size must be odd".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.attn_heads
    }

    /// Output length of one stride-2 convolution with "same" padding.
    pub fn conv_out_len(&self, len: usize) -> usize {
        let pad = self.kernel_size / 2;
        (len + 2 * pad - self.kernel_size) / 2 + 1
    }

    /// Sequence length seen by the encoder.
    pub fn encoder_len(&self) -> usize {
        self.conv_out_len(self.conv_out_len(self.chunk_frames))
    }
}
