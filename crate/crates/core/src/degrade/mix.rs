use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::dsp;
use crate::rir::ImpulseResponse;
use crate::rng::SeededRng;

use super::{DegradeError, Result};

/// Analysis frame of the activity detector: 10 ms.
pub const VAD_FRAME: usize = SAMPLE_RATE as usize / 100;
/// A frame is active when it is within this many dB of the loudest frame.
pub const VAD_RANGE_DB: f64 = 40.0;

pub const SIR_RANGE_DB: (f64, f64) = (3.0, 12.0);

pub fn convolve_reverb(speech: &AudioBuffer, ir: &ImpulseResponse) -> AudioBuffer {
    AudioBuffer::new(dsp::fft_convolve_truncated(speech.samples(), &ir.taps))
        .expect("convolution of finite signals is finite")
}

fn frame_rms(samples: &[f64]) -> Vec<f64> {
    samples
        .chunks(VAD_FRAME)
        .map(|f| (f.iter().map(|s| s * s).sum::<f64>() / f.len() as f64).sqrt())
        .collect()
}

/// One flag per 10 ms frame (the last frame may be partial).
pub fn vad_frames(clean_speech: &AudioBuffer) -> Vec<bool> {
    let rms = frame_rms(clean_speech.samples());
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    let threshold = peak * 10f64.powf(-VAD_RANGE_DB / 20.0);
    rms.iter().map(|&r| r > threshold).collect()
}

/// Power over the samples of active frames, or `None` if no frame is active.
pub(crate) fn active_power(samples: &[f64], active: &[bool]) -> Option<f64> {
    let mut energy = 0.0;
    let mut count = 0usize;
    for (frame, &on) in samples.chunks(VAD_FRAME).zip(active) {
        if on {
            energy += frame.iter().map(|s| s * s).sum::<f64>();
            count += frame.len();
        }
    }
    (count > 0).then(|| energy / count as f64)
}

fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Cuts or loops `noise` to `len` samples starting at a random offset.
pub fn fit_noise(noise: &AudioBuffer, len: usize, rng: &mut SeededRng) -> AudioBuffer {
    let n = noise.len();
    if n == 0 {
        return AudioBuffer::zeros(len);
    }
    let offset = if n > len {
        rng.below(n - len + 1)
    } else {
        rng.below(n)
    };
    let src = noise.samples();
    AudioBuffer::new((0..len).map(|i| src[(offset + i) % n]).collect()).expect("finite")
}

#[derive(Debug, Clone)]
pub struct NoiseMix {
    pub mix: AudioBuffer,
    pub scaled_noise: AudioBuffer,
    pub gain: f64,
    pub achieved_snr_db: f64,
}

/// Mixes noise at an active-speech SNR, with speech activity measured on
/// `speech` itself.
pub fn mix_at_snr(
    speech: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    rng: &mut SeededRng,
) -> Result<NoiseMix> {
    let active = vad_frames(speech);
    mix_at_snr_masked(speech, &active, noise, snr_db, rng)
}

/// As [`mix_at_snr`] with an externally supplied activity mask (normally
/// the one of the clean, undegraded utterance).
pub fn mix_at_snr_masked(
    speech: &AudioBuffer,
    active: &[bool],
    noise: &AudioBuffer,
    snr_db: f64,
    rng: &mut SeededRng,
) -> Result<NoiseMix> {
    let speech_power = active_power(speech.samples(), active)
        .filter(|&p| p > 0.0)
        .ok_or(DegradeError::SilentSpeech)?;
    let noise = fit_noise(noise, speech.len(), rng);
    let noise_power = power(noise.samples());
    if noise_power <= 0.0 {
        return Err(DegradeError::SilentNoise);
    }
    let gain = speech_power.sqrt() / (noise_power.sqrt() * 10f64.powf(snr_db / 20.0));
    let scaled_noise = noise.scaled(gain);
    let achieved_snr_db = 10.0 * (speech_power / power(scaled_noise.samples())).log10();
    Ok(NoiseMix {
        mix: speech.add(&scaled_noise),
        scaled_noise,
        gain,
        achieved_snr_db,
    })
}

/// Adds an interfering talker at `sir_db` below the target (active-RMS
/// ratio). The interferer is cut or zero-extended to the target length.
pub fn mix_overlap(
    target: &AudioBuffer,
    interferer: &AudioBuffer,
    sir_db: f64,
) -> Result<AudioBuffer> {
    if !(SIR_RANGE_DB.0..=SIR_RANGE_DB.1).contains(&sir_db) {
        return Err(DegradeError::OutOfRange {
            what: "sir_db",
            value: sir_db,
        });
    }
    let mut intf = interferer.samples().to_vec();
    intf.resize(target.len(), 0.0);
    let intf = AudioBuffer::new(intf).expect("finite");
    let target_power = active_power(target.samples(), &vad_frames(target))
        .filter(|&p| p > 0.0)
        .ok_or(DegradeError::SilentInput)?;
    let intf_power = active_power(intf.samples(), &vad_frames(&intf))
        .filter(|&p| p > 0.0)
        .ok_or(DegradeError::SilentInput)?;
    let gain = (target_power / intf_power).sqrt() / 10f64.powf(sir_db / 20.0);
    Ok(target.add(&intf.scaled(gain)))
}

/// Active-speech SNR of a speech/noise stem pair, `None` when the mask has
/// no active frame or the noise is silent.
pub fn stem_snr_db(speech: &[f64], noise: &[f64], active: &[bool]) -> Option<f64> {
    let sp = active_power(speech, active)?;
    let np = power(noise);
    (sp > 0.0 && np > 0.0).then(|| 10.0 * (sp / np).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, amp: f64) -> AudioBuffer {
        AudioBuffer::new(
            (0..len)
                .map(|i| amp * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vad_cases() {
        assert!(vad_frames(&AudioBuffer::zeros(1600)).iter().all(|&a| !a));
        assert!(vad_frames(&tone(16000, 0.3)).iter().all(|&a| a));
        let mut s = tone(8000, 0.3).into_samples();
        s.extend(vec![0.0; 8000]);
        let v = vad_frames(&AudioBuffer::new(s).unwrap());
        let active = v.iter().filter(|&&a| a).count();
        assert_eq!(v.len(), 100);
        assert!((49..=51).contains(&active));
    }

    #[test]
    fn closed_form_gain() {
        // Constant signals have RMS equal to their magnitude.
        let speech = AudioBuffer::new(vec![0.1; 1600]).unwrap();
        let noise = AudioBuffer::new(vec![0.2; 1600]).unwrap();
        let m = mix_at_snr(&speech, &noise, 20.0, &mut SeededRng::new(1, 1)).unwrap();
        assert!((m.gain - 0.05).abs() < 1e-12);
        assert!((m.achieved_snr_db - 20.0).abs() < 1e-9);
    }

    #[test]
    fn zero_db_equal_power() {
        let speech = tone(16000, 0.2);
        let mut rng = SeededRng::new(1, 2);
        let noise = AudioBuffer::new((0..16000).map(|_| rng.normal()).collect()).unwrap();
        let m = mix_at_snr(&speech, &noise, 0.0, &mut rng).unwrap();
        let sp = active_power(speech.samples(), &vad_frames(&speech)).unwrap();
        let np = power(m.scaled_noise.samples());
        assert!((10.0 * (sp / np).log10()).abs() < 0.05);
    }

    #[test]
    fn short_noise_is_looped() {
        let speech = tone(16000, 0.2);
        let noise = tone(3000, 0.1);
        let m = mix_at_snr(&speech, &noise, 10.0, &mut SeededRng::new(3, 3)).unwrap();
        assert_eq!(m.mix.len(), 16000);
        assert!(m.scaled_noise.samples()[15000..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn silent_inputs() {
        let mut rng = SeededRng::new(0, 0);
        assert!(matches!(
            mix_at_snr(&AudioBuffer::zeros(320), &tone(320, 0.1), 5.0, &mut rng),
            Err(DegradeError::SilentSpeech)
        ));
        assert!(matches!(
            mix_at_snr(&tone(320, 0.1), &AudioBuffer::zeros(320), 5.0, &mut rng),
            Err(DegradeError::SilentNoise)
        ));
    }

    #[test]
    fn overlap_gain_and_range() {
        let t = AudioBuffer::new(vec![0.1; 1600]).unwrap();
        let i = AudioBuffer::new(vec![0.1; 1600]).unwrap();
        let out = mix_overlap(&t, &i, 20.0 * 2f64.log10()).unwrap();
        assert!((out.samples()[0] - 0.15).abs() < 1e-12);
        assert!(matches!(
            mix_overlap(&t, &i, 20.0),
            Err(DegradeError::OutOfRange { .. })
        ));
        let mixed = mix_overlap(&tone(1600, 0.3), &tone(1600, 0.3), 3.0).unwrap();
        let tp = active_power(tone(1600, 0.3).samples(), &[true; 10]).unwrap();
        assert!(active_power(mixed.samples(), &[true; 10]).unwrap() >= tp);
    }
}
