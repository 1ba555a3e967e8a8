//! Reverberation ground truth computed from an impulse response.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::SAMPLE_RATE;
use crate::rir::{ImpulseResponse, RoomSpec};

/// Bounds applied to every dB-valued reverberation label.
pub const LABEL_DB_MIN: f64 = -40.0;
pub const LABEL_DB_MAX: f64 = 60.0;

/// Direct-path window around the direct arrival, in samples (-0.5 ms, +2.5 ms).
const DIRECT_PRE: usize = 8;
const DIRECT_POST: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum TruthError {
    #[error("impulse response is empty")]
    EmptyIr,
    #[error("direct index {0} out of range")]
    BadDirectIndex(usize),
    #[error("energy decay curve does not span enough decay for a T60 fit")]
    InsufficientDecay,
}

pub type Result<T> = std::result::Result<T, TruthError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverbLabels {
    pub c50_db: f64,
    pub c5_db: f64,
    pub drr_db: f64,
    pub t60_ms: f64,
    pub room_volume_m3: f64,
    pub reflection_coeff: f64,
}

impl ReverbLabels {
    /// Labels for a dry (unreverberated) signal: all energy is direct.
    pub fn anechoic() -> Self {
        Self {
            c50_db: LABEL_DB_MAX,
            c5_db: LABEL_DB_MAX,
            drr_db: LABEL_DB_MAX,
            t60_ms: 0.0,
            room_volume_m3: 0.0,
            reflection_coeff: 0.0,
        }
    }
}

fn clamp_db(x: f64) -> f64 {
    if x.is_nan() {
        return LABEL_DB_MIN;
    }
    x.clamp(LABEL_DB_MIN, LABEL_DB_MAX)
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return LABEL_DB_MAX;
    }
    if num <= 0.0 {
        return LABEL_DB_MIN;
    }
    clamp_db(10.0 * (num / den).log10())
}

fn check(ir: &ImpulseResponse) -> Result<()> {
    if ir.taps.is_empty() {
        return Err(TruthError::EmptyIr);
    }
    if ir.direct_index >= ir.taps.len() {
        return Err(TruthError::BadDirectIndex(ir.direct_index));
    }
    Ok(())
}

fn ms_to_samples(ms: f64) -> usize {
    (ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
}

/// Early-to-late energy ratio with the split `boundary_ms` after the direct
/// arrival. 50 ms gives C50, 5 ms gives C5.
pub fn clarity(ir: &ImpulseResponse, boundary_ms: f64) -> Result<f64> {
    check(ir)?;
    let split = (ir.direct_index + ms_to_samples(boundary_ms)).min(ir.taps.len());
    let early: f64 = ir.taps[ir.direct_index..split].iter().map(|h| h * h).sum();
    let late: f64 = ir.taps[split..].iter().map(|h| h * h).sum();
    Ok(ratio_db(early, late))
}

pub fn drr(ir: &ImpulseResponse) -> Result<f64> {
    check(ir)?;
    let lo = ir.direct_index.saturating_sub(DIRECT_PRE);
    let hi = (ir.direct_index + DIRECT_POST + 1).min(ir.taps.len());
    let total: f64 = ir.taps.iter().map(|h| h * h).sum();
    let direct: f64 = ir.taps[lo..hi].iter().map(|h| h * h).sum();
    Ok(ratio_db(direct, total - direct))
}

/// Schroeder energy decay curve in dB, normalized to 0 dB at t = 0.
pub fn energy_decay_curve(taps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut tail: Vec<f64> = taps
        .iter()
        .rev()
        .map(|h| {
            acc += h * h;
            acc
        })
        .collect();
    tail.reverse();
    let total = tail.first().copied().unwrap_or(0.0);
    tail.iter()
        .map(|&e| {
            if total > 0.0 && e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T60Estimate {
    pub t60_ms: f64,
    /// True when the -35 dB point was never reached and the fit used
    /// [-5, -25] dB instead.
    pub short_range: bool,
}

pub fn t60_schroeder(ir: &ImpulseResponse) -> Result<T60Estimate> {
    check(ir)?;
    let edc = energy_decay_curve(&ir.taps);
    let reaches = |db: f64| edc.iter().any(|&e| e.is_finite() && e <= db);
    let (lo, short_range) = if reaches(-35.0) {
        (-35.0, false)
    } else {
        (-25.0, true)
    };
    let slope = fit_decay(&edc, -5.0, lo).ok_or(TruthError::InsufficientDecay)?;
    if !(slope < 0.0) {
        return Err(TruthError::InsufficientDecay);
    }
    Ok(T60Estimate {
        t60_ms: 60.0 / slope.abs() * 1000.0,
        short_range,
    })
}

/// Least-squares slope (dB/s) of the EDC between its first crossing of `hi`
/// and its first crossing below `lo`.
fn fit_decay(edc: &[f64], hi: f64, lo: f64) -> Option<f64> {
    let start = edc.iter().position(|&e| e <= hi)?;
    let end = edc.iter().position(|&e| e < lo).unwrap_or(edc.len());
    let fs = SAMPLE_RATE as f64;
    let pts: Vec<(f64, f64)> = (start..end)
        .filter(|&i| edc[i].is_finite())
        .map(|i| (i as f64 / fs, edc[i]))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Eyring reverberation time in ms. A fully absorbing room (beta = 0)
/// returns 0.
pub fn eyring_t60(room: &RoomSpec) -> f64 {
    let beta = room.reflection_coeff;
    if beta <= 0.0 {
        return 0.0;
    }
    let absorption = -(beta * beta).ln();
    0.161 * room.volume_m3() / (room.surface_m2() * absorption) * 1000.0
}

/// All six reverberation labels. When the decay fit is impossible T60 falls
/// back to the Eyring value of the room, or 0 if the room is unknown.
pub fn reverb_labels(ir: &ImpulseResponse) -> Result<ReverbLabels> {
    let t60_ms = match t60_schroeder(ir) {
        Ok(est) => est.t60_ms,
        Err(TruthError::InsufficientDecay) => ir.room.as_ref().map(eyring_t60).unwrap_or(0.0),
        Err(e) => return Err(e),
    };
    Ok(ReverbLabels {
        c50_db: clarity(ir, 50.0)?,
        c5_db: clarity(ir, 5.0)?,
        drr_db: drr(ir)?,
        t60_ms,
        room_volume_m3: ir.room.map(|r| r.volume_m3()).unwrap_or(f64::NAN),
        reflection_coeff: ir.room.map(|r| r.reflection_coeff).unwrap_or(f64::NAN),
    })
}
