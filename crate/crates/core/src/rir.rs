//! Shoebox room impulse responses via the image-source method.
//!
//! Images are indexed per axis by a signed integer `i`. Index `i` places the
//! image after `|i|` reflections off the two walls normal to that axis:
//! even `i` gives `i*L + s`, odd `i` gives `(i+1)*L - s`. Every image
//! contributes one tap of amplitude `beta^(|i|+|j|+|k|) / (4 pi d)` at the
//! sample nearest to its propagation delay.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, SAMPLE_RATE};
use crate::rng::SeededRng;

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;

/// Hard cap on the per-axis image order.
pub const MAX_IMAGE_ORDER: usize = 40;

#[derive(Debug, Error)]
pub enum RirError {
    #[error("source or microphone is not strictly inside the room")]
    GeometryOutsideRoom,
    #[error(
        "duration {duration_s:.4} s does not cover the direct path plus 50 ms ({required_s:.4} s)"
    )]
    DurationTooShort { duration_s: f64, required_s: f64 },
    #[error("invalid room: {0}")]
    InvalidRoom(String),
    #[error("room sampling failed after {0} attempts")]
    SamplingFailure(usize),
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

pub type Result<T> = std::result::Result<T, RirError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    /// Pressure reflection coefficient shared by all six surfaces.
    pub reflection_coeff: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

impl RoomSpec {
    pub fn new(length_m: f64, width_m: f64, height_m: f64, reflection_coeff: f64) -> Result<Self> {
        let room = Self {
            length_m,
            width_m,
            height_m,
            reflection_coeff,
            speed_of_sound: default_speed_of_sound(),
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(RirError::InvalidRoom(format!("dimensions {dims:?}")));
        }
        if !(0.0..1.0).contains(&self.reflection_coeff) {
            return Err(RirError::InvalidRoom(format!(
                "reflection coefficient {} outside [0, 1)",
                self.reflection_coeff
            )));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(RirError::InvalidRoom("speed of sound".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length_m, self.width_m, self.height_m]
    }

    pub fn volume_m3(&self) -> f64 {
        self.length_m * self.width_m * self.height_m
    }

    pub fn surface_m2(&self) -> f64 {
        let [l, w, h] = self.dims();
        2.0 * (l * w + l * h + w * h)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p.iter().zip(self.dims()).all(|(&x, d)| x > 0.0 && x < d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub source_xyz: [f64; 3],
    pub mic_xyz: [f64; 3],
}

impl Geometry {
    pub fn distance(&self) -> f64 {
        distance(self.source_xyz, self.mic_xyz)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub direct_index: usize,
    /// Unknown for measured responses.
    pub room: Option<RoomSpec>,
    pub geometry: Option<Geometry>,
}

impl ImpulseResponse {
    /// Wraps arbitrary taps (e.g. a measured response). The direct path is
    /// taken to be the largest-magnitude tap.
    pub fn from_taps(taps: Vec<f64>) -> Self {
        let direct_index = argmax_abs(&taps);
        Self {
            taps,
            direct_index,
            room: None,
            geometry: None,
        }
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }
}

pub(crate) fn argmax_abs(taps: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, t) in taps.iter().enumerate() {
        if t.abs() > best_val {
            best_val = t.abs();
            best = i;
        }
    }
    best
}

/// Smallest order at which the reflection attenuation reaches -80 dB,
/// capped at [`MAX_IMAGE_ORDER`].
pub fn default_max_order(reflection_coeff: f64) -> usize {
    if reflection_coeff <= 0.0 {
        return 0;
    }
    let order = (-4.0 / reflection_coeff.log10()).ceil();
    (order as usize).min(MAX_IMAGE_ORDER)
}

/// Offset of the image with index `i` along one axis, relative to `mic`.
#[inline]
fn image_offset(i: i64, room_len: f64, src: f64, mic: f64) -> f64 {
    if i % 2 == 0 {
        i as f64 * room_len + src - mic
    } else {
        (i + 1) as f64 * room_len - src - mic
    }
}

pub fn simulate_rir(
    room: &RoomSpec,
    geom: &Geometry,
    max_order: usize,
    duration_s: f64,
) -> Result<ImpulseResponse> {
    room.validate()?;
    if !room.contains(geom.source_xyz) || !room.contains(geom.mic_xyz) {
        return Err(RirError::GeometryOutsideRoom);
    }
    let fs = SAMPLE_RATE as f64;
    let c = room.speed_of_sound;
    let required_s = geom.distance() / c + 0.05;
    if !(duration_s >= required_s) {
        return Err(RirError::DurationTooShort {
            duration_s,
            required_s,
        });
    }
    let len = (duration_s * fs).round() as usize;
    let mut taps = vec![0.0; len];
    let beta = room.reflection_coeff;
    let n = max_order as i64;
    let dims = room.dims();

    // Per-axis squared offsets and reflection counts, shared by all triples.
    let axis: Vec<Vec<(f64, usize)>> = (0..3)
        .map(|a| {
            (-n..=n)
                .map(|i| {
                    let off = image_offset(i, dims[a], geom.source_xyz[a], geom.mic_xyz[a]);
                    (off * off, i.unsigned_abs() as usize)
                })
                .collect()
        })
        .collect();
    let beta_pow: Vec<f64> = (0..=3 * max_order).map(|k| beta.powi(k as i32)).collect();
    // Largest distance that still lands inside the tap buffer.
    let max_dist = (len as f64 - 0.5) / fs * c;
    let max_dist2 = max_dist * max_dist;

    for &(dx2, rx) in &axis[0] {
        if dx2 > max_dist2 {
            continue;
        }
        for &(dy2, ry) in &axis[1] {
            let dxy2 = dx2 + dy2;
            if dxy2 > max_dist2 {
                continue;
            }
            for &(dz2, rz) in &axis[2] {
                let d2 = dxy2 + dz2;
                if d2 > max_dist2 {
                    continue;
                }
                let d = d2.sqrt();
                let idx = (d / c * fs).round() as usize;
                if idx < len {
                    taps[idx] += beta_pow[rx + ry + rz] / (4.0 * PI * d);
                }
            }
        }
    }

    let direct_index = argmax_abs(&taps);
    Ok(ImpulseResponse {
        taps,
        direct_index,
        room: Some(*room),
        geometry: Some(*geom),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSamplingConfig {
    pub length_m: (f64, f64),
    pub width_m: (f64, f64),
    pub height_m: (f64, f64),
    pub reflection_coeff: (f64, f64),
    pub wall_clearance_m: f64,
    pub min_separation_m: f64,
    pub max_attempts: usize,
}

impl Default for RoomSamplingConfig {
    fn default() -> Self {
        Self {
            length_m: (3.0, 10.0),
            width_m: (3.0, 8.0),
            height_m: (2.5, 4.5),
            reflection_coeff: (0.2, 0.95),
            wall_clearance_m: 0.5,
            min_separation_m: 0.3,
            max_attempts: 1000,
        }
    }
}

pub fn sample_room(
    rng: &mut SeededRng,
    config: &RoomSamplingConfig,
) -> Result<(RoomSpec, Geometry)> {
    let room = RoomSpec::new(
        rng.uniform(config.length_m.0, config.length_m.1),
        rng.uniform(config.width_m.0, config.width_m.1),
        rng.uniform(config.height_m.0, config.height_m.1),
        rng.uniform(config.reflection_coeff.0, config.reflection_coeff.1),
    )?;
    let geom = sample_geometry(&room, rng, config)?;
    Ok((room, geom))
}

/// Source and microphone positions inside an existing room.
pub fn sample_geometry(
    room: &RoomSpec,
    rng: &mut SeededRng,
    config: &RoomSamplingConfig,
) -> Result<Geometry> {
    let clear = config.wall_clearance_m;
    let d = room.dims();
    if d.iter().any(|&x| x <= 2.0 * clear) {
        return Err(RirError::InvalidRoom(
            "room too small for the wall clearance".into(),
        ));
    }
    let point = |rng: &mut SeededRng| -> [f64; 3] {
        [
            rng.uniform(clear, d[0] - clear),
            rng.uniform(clear, d[1] - clear),
            rng.uniform(clear, d[2] - clear),
        ]
    };
    for _ in 0..config.max_attempts {
        let geom = Geometry {
            source_xyz: point(rng),
            mic_xyz: point(rng),
        };
        if geom.distance() >= config.min_separation_m {
            return Ok(geom);
        }
    }
    Err(RirError::SamplingFailure(config.max_attempts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirSidecar {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub direct_index: usize,
    pub room: Option<RoomSpec>,
    pub geometry: Option<Geometry>,
}

fn sidecar_path(wav: &Path) -> std::path::PathBuf {
    wav.with_extension("json")
}

/// Writes the taps as float WAV plus a `.json` sidecar next to it.
pub fn export_rir(ir: &ImpulseResponse, wav_path: impl AsRef<Path>) -> Result<()> {
    let wav_path = wav_path.as_ref();
    audio::write_wav_f32(&ir.taps, wav_path)?;
    let sidecar = RirSidecar {
        schema_version: SIDECAR_SCHEMA_VERSION,
        sample_rate: SAMPLE_RATE,
        direct_index: ir.direct_index,
        room: ir.room,
        geometry: ir.geometry,
    };
    let json =
        serde_json::to_string_pretty(&sidecar).map_err(|e| RirError::Sidecar(e.to_string()))?;
    std::fs::write(sidecar_path(wav_path), json).map_err(audio::AudioError::from)?;
    Ok(())
}

/// Reads an impulse response. Without a sidecar the room is unknown and
/// the direct path is the largest tap.
pub fn import_rir(wav_path: impl AsRef<Path>) -> Result<ImpulseResponse> {
    let wav_path = wav_path.as_ref();
    let taps = audio::read_wav(wav_path)?.into_samples();
    let side = sidecar_path(wav_path);
    if !side.exists() {
        return Ok(ImpulseResponse::from_taps(taps));
    }
    let text = std::fs::read_to_string(&side).map_err(audio::AudioError::from)?;
    let sc: RirSidecar =
        serde_json::from_str(&text).map_err(|e| RirError::Sidecar(e.to_string()))?;
    if sc.schema_version != SIDECAR_SCHEMA_VERSION {
        return Err(RirError::Sidecar(format!(
            "schema_version {} (expected {SIDECAR_SCHEMA_VERSION})",
            sc.schema_version
        )));
    }
    if sc.direct_index >= taps.len().max(1) {
        return Err(RirError::Sidecar("direct_index out of range".into()));
    }
    Ok(ImpulseResponse {
        taps,
        direct_index: sc.direct_index,
        room: sc.room,
        geometry: sc.geometry,
    })
}
