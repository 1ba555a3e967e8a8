//! Synthetic speech-like signals for desk-scale corpora.
//!
//! Each talker has its own pitch range and vocal-tract scale. Utterances
//! are sequences of words separated by pauses; words are voiced syllables
//! (glottal pulse train through three formant resonators) with occasional
//! fricative noise bursts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::audio::{self, AudioBuffer, SAMPLE_RATE};
use crate::rng::SeededRng;

/// Vowel formants (F1, F2, F3) in Hz for an average adult vocal tract.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 140.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0_hz: f64,
    pub formant_scale: f64,
    pub breathiness: f64,
}

impl Voice {
    pub fn for_speaker(seed: u64, speaker: &str) -> Self {
        let mut rng = SeededRng::for_label(seed, &format!("voice/{speaker}"));
        let female = rng.chance(0.5);
        Self {
            f0_hz: if female {
                rng.uniform(170.0, 260.0)
            } else {
                rng.uniform(90.0, 150.0)
            },
            formant_scale: if female {
                rng.uniform(1.08, 1.2)
            } else {
                rng.uniform(0.9, 1.02)
            },
            breathiness: rng.uniform(0.01, 0.05),
        }
    }
}

struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64) -> Self {
        let fs = SAMPLE_RATE as f64;
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * freq.min(fs / 2.0 - 200.0) / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn syllable(voice: &Voice, len: usize, rng: &mut SeededRng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let vowel = VOWELS[rng.below(VOWELS.len())];
    let mut filters: Vec<Resonator> = vowel
        .iter()
        .zip(BANDWIDTHS)
        .map(|(f, bw)| Resonator::new(f * voice.formant_scale, bw))
        .collect();
    let f0_start = voice.f0_hz * rng.uniform(0.9, 1.15);
    let f0_end = f0_start * rng.uniform(0.8, 1.05);
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let pos = i as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * pos;
        phase += f0 / fs;
        // Glottal pulse: one impulse per period plus aspiration noise.
        let mut excitation = voice.breathiness * rng.normal();
        if phase >= 1.0 {
            phase -= 1.0;
            excitation += 1.0;
        }
        let mut y = excitation;
        for f in filters.iter_mut() {
            y = f.step(y);
        }
        let env = (PI * pos).sin().powf(0.6);
        out.push(env * y);
    }
    // Resonator gain varies with the formants; equalise loudness.
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.1 / rms);
    }
    out
}

fn fricative(len: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut prev = 0.0;
    (0..len)
        .map(|i| {
            let n = rng.normal();
            let hp = n - prev;
            prev = n;
            let env = (PI * i as f64 / len as f64).sin();
            0.02 * env * hp
        })
        .collect()
}

/// One utterance of roughly `duration_s` seconds, peak-normalized to 0.5.
pub fn utterance(voice: &Voice, duration_s: f64, rng: &mut SeededRng) -> AudioBuffer {
    let fs = SAMPLE_RATE as f64;
    let total = (duration_s * fs) as usize;
    let mut out = vec![0.0; total];
    let mut pos = (rng.uniform(0.08, 0.2) * fs) as usize;
    let tail = (0.1 * fs) as usize;
    while pos + tail < total {
        let syllables = 1 + rng.below(3);
        for _ in 0..syllables {
            if rng.chance(0.3) {
                let n = (rng.uniform(0.04, 0.1) * fs) as usize;
                for (k, v) in fricative(n, rng).into_iter().enumerate() {
                    if pos + k < total {
                        out[pos + k] += v;
                    }
                }
                pos += n;
            }
            let n = (rng.uniform(0.12, 0.28) * fs) as usize;
            let amp = rng.uniform(0.5, 1.0);
            for (k, v) in syllable(voice, n, rng).into_iter().enumerate() {
                if pos + k < total {
                    out[pos + k] += amp * v;
                }
            }
            pos += n;
        }
        pos += (rng.uniform(0.05, 0.3) * fs) as usize;
    }
    let buf = AudioBuffer::new(out).expect("finite");
    audio::apply_peak_level(&buf, -6.0206).unwrap_or(buf)
}

/// Writes `<dir>/<speaker>/<speaker>_<nnn>.wav` for `speakers` talkers and
/// returns the paths in order.
pub fn generate_corpus(
    dir: &Path,
    speakers: usize,
    per_speaker: usize,
    duration_s: (f64, f64),
    seed: u64,
) -> audio::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for s in 0..speakers {
        let speaker = format!("spk{s:03}");
        let voice = Voice::for_speaker(seed, &speaker);
        let sub = dir.join(&speaker);
        std::fs::create_dir_all(&sub)?;
        for u in 0..per_speaker {
            let id = format!("{speaker}_{u:03}");
            let mut rng = SeededRng::for_label(seed, &format!("speech/{id}"));
            let dur = rng.uniform(duration_s.0, duration_s.1);
            let path = sub.join(format!("{id}.wav"));
            audio::write_wav(&utterance(&voice, dur, &mut rng), &path)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
