//! Log-mel filterbank frontend and fixed-size chunking.
//!
//! 25 ms Hann frames every 10 ms, centered on multiples of the hop with
//! reflection padding, 512-point power spectra, 80 triangular mel bands
//! over 0-8 kHz and a natural log with a 1e-10 floor.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::dsp::{hann_periodic, FftPair};

pub const WIN_LENGTH: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 80;
pub const CHUNK_FRAMES: usize = 100;
pub const LOG_FLOOR: f64 = 1e-10;
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("input too short: {got} (need at least {need})")]
    TooShort { got: usize, need: usize },
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band edges in Hz: `N_MELS + 2` points evenly spaced on the mel scale.
pub fn mel_edges_hz() -> Vec<f64> {
    let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Triangular filter weights, `N_MELS x (N_FFT/2 + 1)`.
pub fn mel_filterbank() -> Array2<f64> {
    let edges = mel_edges_hz();
    let bins = N_FFT / 2 + 1;
    let mut fb = Array2::zeros((N_MELS, bins));
    for m in 0..N_MELS {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
            let w = ((f - lo) / (center - lo)).min((hi - f) / (hi - center));
            if w > 0.0 {
                fb[[m, k]] = w;
            }
        }
    }
    fb
}

pub fn frame_count(len: usize) -> usize {
    len.div_ceil(HOP_LENGTH)
}

fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j as usize
}

pub fn melfb(buffer: &AudioBuffer) -> Result<Array2<f64>> {
    let x = buffer.samples();
    if x.len() < WIN_LENGTH {
        return Err(FeatureError::TooShort {
            got: x.len(),
            need: WIN_LENGTH,
        });
    }
    let frames = frame_count(x.len());
    let window = hann_periodic(WIN_LENGTH);
    let fb = mel_filterbank();
    let fft = FftPair::new(N_FFT);
    let bins = N_FFT / 2 + 1;
    let mut power = Array2::zeros((frames, bins));
    let mut frame = vec![0.0; WIN_LENGTH];
    for t in 0..frames {
        let start = (t * HOP_LENGTH) as isize - (WIN_LENGTH / 2) as isize;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = x[reflect(start + i as isize, x.len())] * window[i];
        }
        let spec = fft.forward_real(&frame);
        for k in 0..bins {
            power[[t, k]] = spec[k].norm_sqr();
        }
    }
    let mut mel = power.dot(&fb.t());
    mel.mapv_inplace(|e| (e + LOG_FLOOR).ln());
    Ok(mel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChunk {
    /// `CHUNK_FRAMES x N_MELS` log-mel energies.
    pub matrix: Array2<f64>,
    pub utterance_id: String,
    pub chunk_index: usize,
}

/// Non-overlapping 100-frame windows; the remainder is dropped.
pub fn chunk(features: ArrayView2<f64>, utterance_id: &str) -> Result<Vec<FeatureChunk>> {
    let n = features.nrows();
    if n < CHUNK_FRAMES {
        return Err(FeatureError::TooShort {
            got: n,
            need: CHUNK_FRAMES,
        });
    }
    Ok((0..n / CHUNK_FRAMES)
        .map(|k| FeatureChunk {
            matrix: features
                .slice(s![k * CHUNK_FRAMES..(k + 1) * CHUNK_FRAMES, ..])
                .to_owned(),
            utterance_id: utterance_id.to_string(),
            chunk_index: k,
        })
        .collect())
}

/// Features of a whole utterance, chunked.
pub fn extract_chunks(buffer: &AudioBuffer, utterance_id: &str) -> Result<Vec<FeatureChunk>> {
    chunk(melfb(buffer)?.view(), utterance_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub version: u32,
    pub dtype: String,
    pub count: usize,
    pub dims: [usize; 2],
    pub index: Vec<(String, usize)>,
}

/// Feature cache: one JSON header line, then row-major little-endian f32
/// matrices in header order.
pub fn write_cache(path: &Path, chunks: &[FeatureChunk]) -> Result<()> {
    let dims = chunks
        .first()
        .map(|c| [c.matrix.nrows(), c.matrix.ncols()])
        .unwrap_or([CHUNK_FRAMES, N_MELS]);
    if chunks.iter().any(|c| c.matrix.dim() != (dims[0], dims[1])) {
        return Err(FeatureError::Cache("chunks of mixed shape".into()));
    }
    let header = CacheHeader {
        version: CACHE_VERSION,
        dtype: "f32".into(),
        count: chunks.len(),
        dims,
        index: chunks
            .iter()
            .map(|c| (c.utterance_id.clone(), c.chunk_index))
            .collect(),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| FeatureError::Cache(e.to_string()))?;
    w.write_all(b"\n")?;
    for c in chunks {
        for v in c.matrix.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Vec<FeatureChunk>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CacheHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| FeatureError::Cache(e.to_string()))?;
    if header.version != CACHE_VERSION || header.dtype != "f32" {
        return Err(FeatureError::Cache(format!(
            "unsupported version {} / dtype {}",
            header.version, header.dtype
        )));
    }
    if header.index.len() != header.count {
        return Err(FeatureError::Cache(
            "index length differs from count".into(),
        ));
    }
    let [rows, cols] = header.dims;
    let mut buf = vec![0u8; rows * cols * 4];
    header
        .index
        .into_iter()
        .map(|(utterance_id, chunk_index)| {
            r.read_exact(&mut buf)
                .map_err(|_| FeatureError::Cache("truncated payload".into()))?;
            let vals: Vec<f64> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            Ok(FeatureChunk {
                matrix: Array2::from_shape_vec((rows, cols), vals).expect("shape"),
                utterance_id,
                chunk_index,
            })
        })
        .collect()
}
