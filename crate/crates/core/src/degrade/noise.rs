//! Noise classes, built-in generators and external noise directories.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioBuffer, SAMPLE_RATE};
use crate::dsp::FftPair;
use crate::rng::SeededRng;

use super::{DegradeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseClass {
    Ambient,
    Babble,
    Music,
    Other,
    White,
}

impl NoiseClass {
    pub const ALL: [NoiseClass; 5] = [
        NoiseClass::Ambient,
        NoiseClass::Babble,
        NoiseClass::Music,
        NoiseClass::Other,
        NoiseClass::White,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseClass::Ambient => "ambient",
            NoiseClass::Babble => "babble",
            NoiseClass::Music => "music",
            NoiseClass::Other => "other",
            NoiseClass::White => "white",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Gaussian white noise, unit variance.
pub fn white(len: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..len).map(|_| rng.normal()).collect()
}

/// Pink (1/f power) noise by spectral shaping of white noise.
pub fn pink(len: usize, rng: &mut SeededRng) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let fft = FftPair::new(len);
    let mut spec = fft.forward_real(&white(len, rng));
    spec[0] = Complex64::new(0.0, 0.0);
    for k in 1..len {
        let f = k.min(len - k) as f64;
        spec[k] /= f.sqrt();
    }
    normalize(fft.inverse_real(spec))
}

/// Pink noise plus mains hum at 50 Hz and two harmonics.
pub fn hum(len: usize, rng: &mut SeededRng) -> Vec<f64> {
    let base = pink(len, rng);
    let phase = rng.uniform(0.0, 2.0 * PI);
    let fs = SAMPLE_RATE as f64;
    normalize(
        base.iter()
            .enumerate()
            .map(|(i, b)| {
                let t = i as f64 / fs;
                let h: f64 = [(1.0, 1.0), (2.0, 0.5), (3.0, 0.3)]
                    .iter()
                    .map(|(m, a)| a * (2.0 * PI * 50.0 * m * t + phase).sin())
                    .sum();
                b + 1.2 * h
            })
            .collect(),
    )
}

/// Six randomly shifted talkers from the pool, each at equal level.
pub fn babble(len: usize, pool: &[AudioBuffer], rng: &mut SeededRng) -> Result<Vec<f64>> {
    let usable: Vec<&AudioBuffer> = pool.iter().filter(|b| b.peak() > 0.0).collect();
    if usable.is_empty() {
        return Err(DegradeError::EmptyNoisePool("babble"));
    }
    let mut out = vec![0.0; len];
    for _ in 0..6 {
        let talker = normalize(usable[rng.below(usable.len())].samples().to_vec());
        let n = talker.len();
        let shift = rng.below(n);
        for (i, o) in out.iter_mut().enumerate() {
            *o += talker[(shift + i) % n];
        }
    }
    Ok(normalize(out))
}

/// Two voices of decaying harmonic notes with random note changes.
pub fn music(len: usize, rng: &mut SeededRng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    for _voice in 0..2 {
        let mut t0 = 0usize;
        while t0 < len {
            let dur = (rng.uniform(0.15, 0.5) * fs) as usize;
            let midi = 48.0 + rng.below(37) as f64;
            let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
            let decay = rng.uniform(2.0, 8.0);
            let amp = rng.uniform(0.5, 1.0);
            for i in 0..dur.min(len - t0) {
                let t = i as f64 / fs;
                let env = amp * (-decay * t).exp();
                let mut v = 0.0;
                for h in 1..=5 {
                    let f = f0 * h as f64;
                    if f < fs / 2.0 {
                        v += (2.0 * PI * f * t).sin() / h as f64;
                    }
                }
                out[t0 + i] += env * v;
            }
            t0 += dur.max(1);
        }
    }
    normalize(out)
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let r = audio::rms_of(&x).unwrap_or(0.0);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v /= r);
    }
    x
}

/// Noise material per class: external files where a directory provides
/// them, built-in generators otherwise.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    files: BTreeMap<NoiseClass, Vec<PathBuf>>,
}

impl NoiseBank {
    pub fn builtin() -> Self {
        Self::default()
    }

    /// Scans `<dir>/<class>/*.wav` for every class name.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        for class in NoiseClass::ALL {
            let sub = dir.join(class.name());
            if !sub.is_dir() {
                continue;
            }
            let mut wavs: Vec<PathBuf> = std::fs::read_dir(&sub)
                .map_err(audio::AudioError::from)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            wavs.sort();
            if !wavs.is_empty() {
                files.insert(class, wavs);
            }
        }
        Ok(Self { files })
    }

    pub fn has_files(&self, class: NoiseClass) -> bool {
        self.files.contains_key(&class)
    }

    /// Returns noise for `class` plus a short description of its source.
    pub fn draw(
        &self,
        class: NoiseClass,
        len: usize,
        speech_pool: &[AudioBuffer],
        rng: &mut SeededRng,
    ) -> Result<(AudioBuffer, String)> {
        if let Some(paths) = self.files.get(&class) {
            let path = &paths[rng.below(paths.len())];
            let buf = audio::read_wav(path)?;
            return Ok((buf, path.display().to_string()));
        }
        let samples = match class {
            NoiseClass::White => white(len, rng),
            NoiseClass::Ambient => pink(len, rng),
            NoiseClass::Other => hum(len, rng),
            NoiseClass::Babble => babble(len, speech_pool, rng)?,
            NoiseClass::Music => music(len, rng),
        };
        Ok((
            AudioBuffer::new(samples).expect("finite"),
            format!("builtin:{}", class.name()),
        ))
    }
}
