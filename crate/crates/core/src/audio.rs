//! Audio buffers, WAV I/O and level utilities.
//!
//! Everything in the crate runs at a single fixed rate of 16 kHz, mono.
//! Files at any other rate or channel count are rejected on read instead of
//! being resampled.

use std::path::Path;

use thiserror::Error;

/// The only sample rate accepted anywhere in the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV file: {0}")]
    CorruptFile(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("buffer contains non-finite samples")]
    NonFinite,
    #[error("input is silent")]
    SilentInput,
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("target level {0} dBFS must be <= 0")]
    InvalidLevel(f64),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono 16 kHz audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn slice(&self, start: usize, end: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[start.min(self.len())..end.min(self.len())].to_vec(),
        }
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
        }
    }

    /// Sample-wise sum; the result has the length of `self`, `other` is
    /// zero-extended or truncated.
    pub fn add(&self, other: &AudioBuffer) -> AudioBuffer {
        let mut out = self.samples.clone();
        for (o, s) in out.iter_mut().zip(other.samples.iter()) {
            *o += s;
        }
        AudioBuffer { samples: out }
    }
}

/// Outcome of a write: the number of samples that had to be clamped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteReport {
    pub clipped_samples: usize,
}

impl WriteReport {
    pub fn clipped(&self) -> bool {
        self.clipped_samples > 0
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(e, path))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}: {} Hz, {} channel(s); expected 16000 Hz mono",
            path.display(),
            spec.sample_rate,
            spec.channels
        )));
    }
    let expected = reader.len() as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| corrupt_samples(e, path))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| corrupt_samples(e, path))?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?}; expected 16-bit PCM or 32-bit float",
                path.display()
            )))
        }
    };
    if samples.len() != expected {
        return Err(AudioError::CorruptFile(format!(
            "{}: header declares {expected} samples, found {}",
            path.display(),
            samples.len()
        )));
    }
    AudioBuffer::new(samples).map_err(|_| {
        AudioError::CorruptFile(format!("{}: non-finite float samples", path.display()))
    })
}

/// Failures while decoding the data chunk mean the file is damaged.
fn corrupt_samples(e: hound::Error, path: &Path) -> AudioError {
    AudioError::CorruptFile(format!("{}: {e}", path.display()))
}

fn map_hound(e: hound::Error, path: &Path) -> AudioError {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::CorruptFile(format!("{}: truncated", path.display()))
        }
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::Unsupported => {
            AudioError::UnsupportedFormat(format!("{}: unsupported encoding", path.display()))
        }
        other => AudioError::CorruptFile(format!("{}: {other}", path.display())),
    }
}

/// Writes 16-bit PCM. Samples outside [-1, 1] are clamped and counted.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<WriteReport> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let path = path.as_ref();
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(e, path))?;
    let mut report = WriteReport::default();
    for &s in buffer.samples() {
        writer
            .write_sample(quantize_i16(s, &mut report))
            .map_err(|e| map_hound(e, path))?;
    }
    writer.finalize().map_err(|e| map_hound(e, path))?;
    if report.clipped() {
        log::warn!(
            "{}: {} sample(s) clipped to full scale",
            path.display(),
            report.clipped_samples
        );
    }
    Ok(report)
}

/// Writes 32-bit float WAV, used for impulse responses where amplitudes
/// exceed the PCM range.
pub fn write_wav_f32(samples: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let path = path.as_ref();
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(e, path))?;
    for &s in samples {
        writer
            .write_sample(s as f32)
            .map_err(|e| map_hound(e, path))?;
    }
    writer.finalize().map_err(|e| map_hound(e, path))?;
    Ok(())
}

fn quantize_i16(s: f64, report: &mut WriteReport) -> i16 {
    if s.abs() > 1.0 {
        report.clipped_samples += 1;
    }
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Rounds every sample to the 16-bit PCM grid, i.e. what a write/read
/// cycle would produce.
pub fn quantize_pcm16(buffer: &AudioBuffer) -> AudioBuffer {
    let mut report = WriteReport::default();
    AudioBuffer {
        samples: buffer
            .samples()
            .iter()
            .map(|&s| quantize_i16(s, &mut report) as f64 / 32768.0)
            .collect(),
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    20.0 * x.log10()
}

/// Scales the buffer so that its peak sits at `target_dbfs`.
pub fn apply_peak_level(buffer: &AudioBuffer, target_dbfs: f64) -> Result<AudioBuffer> {
    if target_dbfs > 0.0 || !target_dbfs.is_finite() {
        return Err(AudioError::InvalidLevel(target_dbfs));
    }
    let peak = buffer.peak();
    if peak == 0.0 {
        return Err(AudioError::SilentInput);
    }
    Ok(buffer.scaled(db_to_linear(target_dbfs) / peak))
}

pub fn rms(buffer: &AudioBuffer) -> Result<f64> {
    rms_of(buffer.samples()).ok_or(AudioError::EmptyBuffer)
}

pub(crate) fn rms_of(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let energy: f64 = samples.iter().map(|s| s * s).sum();
    Some((energy / samples.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw_i16(path: &Path, rate: u32, channels: u16, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &d in data {
            w.write_sample(d).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw_i16(&p, 16000, 1, &[0, 16384, -32768]);
        let b = read_wav(&p).unwrap();
        assert_eq!(b.samples(), &[0.0, 0.5, -1.0]);
    }

    #[test]
    fn silence_length_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_wav(&AudioBuffer::zeros(16000), &p).unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.len(), 16000);
        assert!(b.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_raw_i16(&p, 44100, 2, &[0, 0, 1, 1]);
        assert!(matches!(
            read_wav(&p),
            Err(AudioError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_wav(&AudioBuffer::new(vec![0.25; 1000]).unwrap(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        let r = read_wav(&p);
        assert!(matches!(r, Err(AudioError::CorruptFile(_))), "{r:?}");
    }

    #[test]
    fn float_wav_accepted_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        write_wav_f32(&[0.125, -0.75], &p).unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.125, -0.75]);
    }

    #[test]
    fn write_clamps_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let report = write_wav(&AudioBuffer::new(vec![1.7, 0.0]).unwrap(), &p).unwrap();
        assert_eq!(report.clipped_samples, 1);
        let raw: Vec<i16> = hound::WavReader::open(&p)
            .unwrap()
            .into_samples::<i16>()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(raw, vec![32767, 0]);
    }

    #[test]
    fn empty_buffer_writes_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_wav(&AudioBuffer::zeros(0), &p).unwrap();
        assert!(read_wav(&p).unwrap().is_empty());
    }

    #[test]
    fn peak_level() {
        let b = AudioBuffer::new(vec![0.5, -0.25, 0.1]).unwrap();
        let out = apply_peak_level(&b, -6.020599913279624).unwrap();
        assert!((out.peak() - 0.5).abs() < 1e-9);
        let b = AudioBuffer::new(vec![1.0, -0.3]).unwrap();
        assert!((apply_peak_level(&b, -20.0).unwrap().peak() - 0.1).abs() < 1e-12);
        assert!(matches!(
            apply_peak_level(&AudioBuffer::zeros(4), -3.0),
            Err(AudioError::SilentInput)
        ));
    }

    #[test]
    fn rms_values() {
        assert_eq!(rms(&AudioBuffer::new(vec![0.5; 10]).unwrap()).unwrap(), 0.5);
        let alt: Vec<f64> = (0..10)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(rms(&AudioBuffer::new(alt).unwrap()).unwrap(), 1.0);
        assert_eq!(rms(&AudioBuffer::zeros(5)).unwrap(), 0.0);
        assert!(matches!(
            rms(&AudioBuffer::zeros(0)),
            Err(AudioError::EmptyBuffer)
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AudioBuffer::new(vec![f64::NAN]).is_err());
    }
}
