//! Codec interface and the built-in surrogate codecs.
//!
//! The surrogates requantize STFT magnitudes (512-point sqrt-Hann frames,
//! 50 % overlap, phases kept). The bit depth follows the bit rate linearly,
//! 2 bits at 8 kbps up to 10 bits at 64 kbps, relative to each frame's
//! largest magnitude. The speech preset spends one bit less above 4 kHz.

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::{hann_periodic, FftPair};

use super::{DegradeError, Result};

pub const BITRATE_RANGE_KBPS: (f64, f64) = (8.0, 64.0);
/// Label used for uncompressed audio: 16 kHz x 16-bit PCM.
pub const UNCOMPRESSED_KBPS: f64 = 256.0;

const FRAME: usize = 512;
const HOP: usize = 256;
const SPEECH_SPLIT_HZ: f64 = 4000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecClass {
    Uncompressed,
    SurrogateSpeech,
    SurrogateMusic,
}

impl CodecClass {
    pub const ALL: [CodecClass; 3] = [
        CodecClass::Uncompressed,
        CodecClass::SurrogateSpeech,
        CodecClass::SurrogateMusic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecClass::Uncompressed => "uncompressed",
            CodecClass::SurrogateSpeech => "surrogate_speech",
            CodecClass::SurrogateMusic => "surrogate_music",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub codec_class: CodecClass,
    pub bitrate_kbps: f64,
}

impl CodecSpec {
    pub fn uncompressed() -> Self {
        Self {
            codec_class: CodecClass::Uncompressed,
            bitrate_kbps: UNCOMPRESSED_KBPS,
        }
    }

    pub fn new(codec_class: CodecClass, bitrate_kbps: f64) -> Result<Self> {
        if codec_class == CodecClass::Uncompressed {
            return Ok(Self::uncompressed());
        }
        let spec = Self {
            codec_class,
            bitrate_kbps,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.codec_class {
            CodecClass::Uncompressed => Ok(()),
            _ if (BITRATE_RANGE_KBPS.0..=BITRATE_RANGE_KBPS.1).contains(&self.bitrate_kbps) => {
                Ok(())
            }
            _ => Err(DegradeError::InvalidBitrate(self.bitrate_kbps)),
        }
    }

    /// Bitrate regression target.
    pub fn label_kbps(&self) -> f64 {
        match self.codec_class {
            CodecClass::Uncompressed => UNCOMPRESSED_KBPS,
            _ => self.bitrate_kbps,
        }
    }
}

/// Anything that turns audio into audio and declares the labels it stands
/// for. External codecs plug in here.
pub trait Codec: Send + Sync {
    fn process(&self, signal: &AudioBuffer) -> Result<AudioBuffer>;
    fn spec(&self) -> CodecSpec;
}

#[derive(Debug, Clone, Copy)]
pub struct SurrogateCodec {
    spec: CodecSpec,
}

impl SurrogateCodec {
    pub fn new(spec: CodecSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    fn bits(&self) -> f64 {
        let (lo, hi) = BITRATE_RANGE_KBPS;
        2.0 + (self.spec.bitrate_kbps - lo) / (hi - lo) * 8.0
    }
}

impl Codec for SurrogateCodec {
    fn process(&self, signal: &AudioBuffer) -> Result<AudioBuffer> {
        if self.spec.codec_class == CodecClass::Uncompressed {
            return Ok(signal.clone());
        }
        let bits = self.bits();
        let split_bin = (SPEECH_SPLIT_HZ / 16000.0 * FRAME as f64).round() as usize;
        let speech = self.spec.codec_class == CodecClass::SurrogateSpeech;
        Ok(requantize(signal, |bin| {
            if speech && bin > split_bin {
                bits - 1.0
            } else {
                bits
            }
        }))
    }

    fn spec(&self) -> CodecSpec {
        self.spec
    }
}

pub fn apply_codec(signal: &AudioBuffer, spec: &CodecSpec) -> Result<AudioBuffer> {
    SurrogateCodec::new(*spec)?.process(signal)
}

fn requantize(signal: &AudioBuffer, bits_for_bin: impl Fn(usize) -> f64) -> AudioBuffer {
    let n = signal.len();
    if n == 0 {
        return signal.clone();
    }
    let window: Vec<f64> = hann_periodic(FRAME).iter().map(|w| w.sqrt()).collect();
    // HOP samples of leading padding so every output sample is covered by
    // two frames.
    let mut padded = vec![0.0; HOP];
    padded.extend_from_slice(signal.samples());
    let frames = padded.len().div_ceil(HOP);
    padded.resize(frames * HOP + FRAME, 0.0);
    let fft = FftPair::new(FRAME);
    let mut out = vec![0.0; padded.len()];
    let half = FRAME / 2;
    for f in 0..frames {
        let start = f * HOP;
        let frame: Vec<f64> = padded[start..start + FRAME]
            .iter()
            .zip(&window)
            .map(|(x, w)| x * w)
            .collect();
        let mut spec = fft.forward_real(&frame);
        let max_mag = spec[..=half].iter().map(|c| c.norm()).fold(0.0, f64::max);
        if max_mag > 0.0 {
            for bin in 0..=half {
                let step = max_mag * 2f64.powf(-bits_for_bin(bin));
                let mag = spec[bin].norm();
                let q = (mag / step).round() * step;
                spec[bin] = if mag > 0.0 {
                    spec[bin] * (q / mag)
                } else {
                    spec[bin]
                };
            }
            for bin in 1..half {
                spec[FRAME - bin] = spec[bin].conj();
            }
        }
        let y = fft.inverse_real(spec);
        for (i, (v, w)) in y.iter().zip(&window).enumerate() {
            out[start + i] += v * w;
        }
    }
    AudioBuffer::new(out[HOP..HOP + n].to_vec()).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = SeededRng::new(seed, 0);
        AudioBuffer::new((0..len).map(|_| 0.1 * rng.normal()).collect()).unwrap()
    }

    fn l2(a: &AudioBuffer, b: &AudioBuffer) -> f64 {
        a.samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn uncompressed_is_identity() {
        let x = noise(5000, 1);
        assert_eq!(apply_codec(&x, &CodecSpec::uncompressed()).unwrap(), x);
    }

    #[test]
    fn reconstruction_without_quantization_is_exact() {
        let x = noise(3000, 2);
        let y = requantize(&x, |_| 60.0);
        assert!(l2(&x, &y) < 1e-9);
    }

    #[test]
    fn distortion_decreases_with_bitrate() {
        let x = noise(16000, 3);
        for class in [CodecClass::SurrogateSpeech, CodecClass::SurrogateMusic] {
            let d: Vec<f64> = [8.0, 16.0, 32.0, 64.0]
                .iter()
                .map(|&br| {
                    l2(
                        &x,
                        &apply_codec(&x, &CodecSpec::new(class, br).unwrap()).unwrap(),
                    )
                })
                .collect();
            assert!(d.windows(2).all(|w| w[1] <= w[0]), "{d:?}");
            assert!(d[0] > d[3]);
        }
    }

    #[test]
    fn presets_differ() {
        let x = noise(16000, 4);
        let s = apply_codec(
            &x,
            &CodecSpec::new(CodecClass::SurrogateSpeech, 32.0).unwrap(),
        )
        .unwrap();
        let m = apply_codec(
            &x,
            &CodecSpec::new(CodecClass::SurrogateMusic, 32.0).unwrap(),
        )
        .unwrap();
        assert!(l2(&s, &m) > 0.0);
    }

    #[test]
    fn bitrate_bounds() {
        assert!(matches!(
            CodecSpec::new(CodecClass::SurrogateMusic, 4.0),
            Err(DegradeError::InvalidBitrate(_))
        ));
        assert_eq!(
            CodecSpec::new(CodecClass::Uncompressed, 4.0)
                .unwrap()
                .label_kbps(),
            256.0
        );
    }
}
