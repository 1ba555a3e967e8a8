//! The degradation chain: reverb, overlapping talker, additive noise, codec
//! and output level, applied in that order.

mod codec;
mod mix;
mod noise;

pub use codec::{
    apply_codec, Codec, CodecClass, CodecSpec, SurrogateCodec, BITRATE_RANGE_KBPS,
    UNCOMPRESSED_KBPS,
};
pub use mix::{
    convolve_reverb, fit_noise, mix_at_snr, mix_at_snr_masked, mix_overlap, stem_snr_db,
    vad_frames, NoiseMix, SIR_RANGE_DB, VAD_FRAME, VAD_RANGE_DB,
};
pub use noise::{babble, hum, music, pink, white, NoiseBank, NoiseClass};

use thiserror::Error;

use crate::audio::{self, AudioBuffer};
use crate::rir::ImpulseResponse;
use crate::rng::SeededRng;

pub const SNR_RANGE_DB: (f64, f64) = (0.0, 30.0);
pub const PEAK_RANGE_DBFS: (f64, f64) = (-10.0, -0.1);

#[derive(Debug, Error)]
pub enum DegradeError {
    #[error("speech has no active frames")]
    SilentSpeech,
    #[error("noise is silent")]
    SilentNoise,
    #[error("input is silent")]
    SilentInput,
    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("bit rate {0} kbps outside [8, 64]")]
    InvalidBitrate(f64),
    #[error("no material available for {0} noise")]
    EmptyNoisePool(&'static str),
    #[error("overlap requested without an interfering utterance")]
    MissingInterferer,
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
}

pub type Result<T> = std::result::Result<T, DegradeError>;

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapSpec {
    pub sir_db: f64,
    /// Response applied to the interferer before mixing.
    pub rir: Option<ImpulseResponse>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationRecipe {
    pub rir: Option<ImpulseResponse>,
    pub noise_class: NoiseClass,
    pub snr_db: f64,
    pub overlap: Option<OverlapSpec>,
    pub codec: CodecSpec,
    pub peak_dbfs: f64,
}

impl DegradationRecipe {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64), what| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(DegradeError::OutOfRange { what, value: v })
            }
        };
        in_range(self.snr_db, SNR_RANGE_DB, "snr_db")?;
        in_range(self.peak_dbfs, PEAK_RANGE_DBFS, "peak_dbfs")?;
        if let Some(ov) = &self.overlap {
            in_range(ov.sir_db, SIR_RANGE_DB, "sir_db")?;
        }
        self.codec.validate()
    }
}

/// Output of the chain plus the intermediate stems needed for labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub output: AudioBuffer,
    /// Speech component (reverberant target plus interferer), pre-noise.
    pub speech: AudioBuffer,
    /// Noise exactly as added to `speech`.
    pub noise: AudioBuffer,
    pub pre_codec: AudioBuffer,
    /// Activity of the clean target, one flag per 10 ms frame.
    pub clean_vad: Vec<bool>,
    pub achieved_snr_db: f64,
    pub level_gain: f64,
}

pub fn degrade(
    clean: &AudioBuffer,
    recipe: &DegradationRecipe,
    interferer: Option<&AudioBuffer>,
    noise: &AudioBuffer,
    codec: &dyn Codec,
    rng: &mut SeededRng,
) -> Result<Degraded> {
    recipe.validate()?;
    let clean_vad = vad_frames(clean);

    let mut speech = match &recipe.rir {
        Some(ir) => convolve_reverb(clean, ir),
        None => clean.clone(),
    };
    if let Some(ov) = &recipe.overlap {
        let intf = interferer.ok_or(DegradeError::MissingInterferer)?;
        let intf = match &ov.rir {
            Some(ir) => convolve_reverb(intf, ir),
            None => intf.clone(),
        };
        speech = mix_overlap(&speech, &intf, ov.sir_db)?;
    }

    let mixed = mix_at_snr_masked(&speech, &clean_vad, noise, recipe.snr_db, rng)?;
    let pre_codec = mixed.mix;
    let coded = codec.process(&pre_codec)?;
    let peak = coded.peak();
    if peak == 0.0 {
        return Err(DegradeError::SilentInput);
    }
    let level_gain = audio::db_to_linear(recipe.peak_dbfs) / peak;
    Ok(Degraded {
        output: coded.scaled(level_gain),
        speech,
        noise: mixed.scaled_noise,
        pre_codec,
        clean_vad,
        achieved_snr_db: mixed.achieved_snr_db,
        level_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rir::{simulate_rir, Geometry, RoomSpec};

    fn signal(seed: u64, len: usize) -> AudioBuffer {
        let mut rng = SeededRng::new(seed, 9);
        AudioBuffer::new(
            (0..len)
                .map(|i| 0.3 * (i as f64 * 0.05).sin() + 0.01 * rng.normal())
                .collect(),
        )
        .unwrap()
    }

    fn recipe(overlap: bool) -> DegradationRecipe {
        let room = RoomSpec::new(5.0, 4.0, 3.0, 0.7).unwrap();
        let g = Geometry {
            source_xyz: [1.0, 1.0, 1.5],
            mic_xyz: [3.5, 2.5, 1.2],
        };
        let ir = simulate_rir(&room, &g, 6, 0.25).unwrap();
        DegradationRecipe {
            rir: Some(ir.clone()),
            noise_class: NoiseClass::White,
            snr_db: 12.0,
            overlap: overlap.then(|| OverlapSpec {
                sir_db: 6.0,
                rir: Some(ir),
            }),
            codec: CodecSpec::new(CodecClass::SurrogateMusic, 24.0).unwrap(),
            peak_dbfs: -3.0,
        }
    }

    #[test]
    fn chain_is_deterministic_and_leveled() {
        let clean = signal(1, 16000);
        let intf = signal(2, 12000);
        let noise = signal(3, 20000);
        let r = recipe(true);
        let codec = SurrogateCodec::new(r.codec).unwrap();
        let a = degrade(
            &clean,
            &r,
            Some(&intf),
            &noise,
            &codec,
            &mut SeededRng::new(4, 4),
        )
        .unwrap();
        let b = degrade(
            &clean,
            &r,
            Some(&intf),
            &noise,
            &codec,
            &mut SeededRng::new(4, 4),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!((a.output.peak() - audio::db_to_linear(-3.0)).abs() < 1e-12);
        assert!((a.achieved_snr_db - 12.0).abs() < 1e-9);
        assert_eq!(a.output.len(), clean.len());
    }

    #[test]
    fn overlap_requires_interferer() {
        let r = recipe(true);
        let codec = SurrogateCodec::new(r.codec).unwrap();
        let s = signal(1, 4000);
        assert!(matches!(
            degrade(&s, &r, None, &s, &codec, &mut SeededRng::new(0, 0)),
            Err(DegradeError::MissingInterferer)
        ));
    }

    #[test]
    fn recipe_ranges() {
        let mut r = recipe(false);
        r.snr_db = 31.0;
        assert!(r.validate().is_err());
        let mut r = recipe(false);
        r.peak_dbfs = 0.0;
        assert!(r.validate().is_err());
    }
}
