//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use xane_core::model::{ModelConfig, ModelParams, Network, Targets, TaskMask};
use xane_core::rir::{Geometry, RoomSpec};

const FS: f64 = 16_000.0;

/// Image sources enumerated one at a time from their mirror parity and
/// lattice index: coordinate `(1 - 2p)·s + 2mL` with `|2m - p|` wall hits
/// per axis.
pub fn brute_force_rir(room: &RoomSpec, geom: &Geometry, max_order: usize, duration_s: f64) -> Vec<f64> {
    let len = (duration_s * FS).round() as usize;
    let mut taps = vec![0.0; len];
    let dims = room.dims();
    let n = max_order as i64;
    let mut images = Vec::new();
    for px in 0..2i64 {
        for py in 0..2i64 {
            for pz in 0..2i64 {
                for mx in -n..=n {
                    for my in -n..=n {
                        for mz in -n..=n {
                            let p = [px, py, pz];
                            let m = [mx, my, mz];
                            let hits: Vec<i64> = (0..3).map(|a| (2 * m[a] - p[a]).abs()).collect();
                            if hits.iter().any(|&h| h > n) {
                                continue;
                            }
                            let pos: Vec<f64> = (0..3)
                                .map(|a| {
                                    (1 - 2 * p[a]) as f64 * geom.source_xyz[a]
                                        + 2.0 * m[a] as f64 * dims[a]
                                })
                                .collect();
                            images.push((pos, hits.iter().sum::<i64>()));
                        }
                    }
                }
            }
        }
    }
    for (pos, refl) in images {
        let d = (0..3)
            .map(|a| (pos[a] - geom.mic_xyz[a]).powi(2))
            .sum::<f64>()
            .sqrt();
        let idx = (d / room.speed_of_sound * FS).round() as usize;
        if idx < len {
            taps[idx] += room.reflection_coeff.powi(refl as i32) / (4.0 * PI * d);
        }
    }
    taps
}

/// Number of images with per-axis order at most `max_order`.
pub fn image_count(max_order: usize) -> usize {
    (2 * max_order + 1).pow(3)
}

/// Direct-form convolution truncated to `x.len()`.
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let mut acc = 0.0;
            for (k, hk) in h.iter().enumerate().take(t + 1) {
                acc += hk * x[t - k];
            }
            acc
        })
        .collect()
}

/// 10 ms frames within 40 dB of the loudest frame.
pub fn active_frames(clean: &[f64]) -> Vec<bool> {
    let rms: Vec<f64> = clean
        .chunks(160)
        .map(|f| (f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt())
        .collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    rms.iter()
        .map(|&r| peak > 0.0 && r > 0.0 && 20.0 * (r / peak).log10() > -40.0)
        .collect()
}

/// Active-speech power over whole-signal noise power, in dB.
pub fn measured_snr_db(speech: &[f64], noise: &[f64], active: &[bool]) -> f64 {
    let (mut sp, mut n) = (0.0, 0usize);
    for (frame, &a) in speech.chunks(160).zip(active) {
        if a {
            sp += frame.iter().map(|v| v * v).sum::<f64>();
            n += frame.len();
        }
    }
    let np = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    10.0 * ((sp / n as f64) / np).log10()
}

/// Noise-free exponential decay with time constant chosen for `t60_ms`.
pub fn exponential_decay(t60_ms: f64, len: usize) -> Vec<f64> {
    // Energy falls 60 dB in T60, so amplitude falls by 10^(-3) and the
    // squared taps decay as 10^(-6 t / T60).
    let tau = t60_ms / 1000.0 / (3.0 * std::f64::consts::LN_10);
    (0..len).map(|i| (-(i as f64 / FS) / tau).exp()).collect()
}

pub struct GradientCheck {
    pub checked: usize,
    pub params: usize,
    pub worst: f64,
    pub worst_at: String,
}

fn grad_setup(seed: u64) -> (ModelParams, Array2<f64>, Targets) {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(cfg, seed).unwrap();
    let x = Array2::from_shape_fn((cfg.chunk_frames, cfg.n_mels), |(i, j)| {
        ((i * 13 + j * 7 + seed as usize) % 17) as f64 / 8.0 - 1.0
    });
    let mut t = Targets::default();
    for (i, r) in t.regression.iter_mut().enumerate() {
        *r = Some(0.3 * i as f64 - 1.2);
    }
    t.classes = [Some(3), Some(1), Some(0)];
    (params, x, t)
}

fn loss_at(params: &ModelParams, x: &Array2<f64>, t: &Targets) -> f64 {
    let mut scratch = Network::zeros(&params.config);
    params
        .loss_and_grad(x.view(), t, &TaskMask::default(), &mut scratch)
        .unwrap()
        .total
}

/// Central differences for every entry of every tensor of the tiny model.
pub fn gradient_check(seed: u64, eps: f64) -> GradientCheck {
    let (params, x, t) = grad_setup(seed);
    let mut grad = Network::zeros(&params.config);
    params
        .loss_and_grad(x.view(), &t, &TaskMask::default(), &mut grad)
        .unwrap();
    let mut analytic = Vec::new();
    grad.visit(&mut |name, _, g| analytic.push((name.to_string(), g.to_vec())));

    let mut report = GradientCheck {
        checked: 0,
        params: params.param_count(),
        worst: 0.0,
        worst_at: String::new(),
    };
    for (ti, (name, g)) in analytic.iter().enumerate() {
        for (i, &gi) in g.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                let mut k = 0;
                p.net.visit_mut(&mut |_, v| {
                    if k == ti {
                        v[i] += delta;
                    }
                    k += 1;
                });
                loss_at(&p, &x, &t)
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let rel = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-6);
            if rel > report.worst {
                report.worst = rel;
                report.worst_at = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    report
}
