//! End-to-end acceptance checks, one test per criterion. Each test writes a
//! single `criterion N ...: PASS|FAIL` line straight to stderr so it shows
//! up without `--nocapture`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use xane_core::audio::{self, AudioBuffer};
use xane_core::degrade::{
    self, convolve_reverb, CodecClass, CodecSpec, DegradationRecipe, NoiseBank, NoiseClass,
    OverlapSpec, SurrogateCodec,
};
use xane_core::eval::{
    self, cosine_distance, greedy_assignment, hungarian, kmeans_f1, EmbeddingRecord, Filter,
    LabelField, VectorEncoding,
};
use xane_core::model::{self, count_params, Ablation, ModelConfig, ModelParams, EMBED_DIMS};
use xane_core::rir::{self, Geometry, ImpulseResponse, RoomSamplingConfig, RoomSpec};
use xane_core::rng::SeededRng;
use xane_core::speech::{self, Voice};
use xane_core::synth::{self, SynthConfig};
use xane_core::train::{self, TrainConfig};
use xane_core::truth;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n} {name}: {verdict} ({detail})");
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
}

#[test]
fn criterion_01_rir_matches_brute_force_enumeration() {
    let start = Instant::now();
    let cfg = RoomSamplingConfig::default();
    let mut rng = SeededRng::for_label(101, "acceptance/rir");
    let mut worst = 0.0f64;
    let mut index_mismatch = 0;
    for case in 0..20 {
        let (room, geom) = rir::sample_room(&mut rng, &cfg).unwrap();
        let order = case % 4;
        let fast = rir::simulate_rir(&room, &geom, order, 0.4).unwrap();
        let slow = common::brute_force_rir(&room, &geom, order, 0.4);
        assert_eq!(fast.taps.len(), slow.len());
        for (a, b) in fast.taps.iter().zip(&slow) {
            if (*a == 0.0) != (*b == 0.0) {
                index_mismatch += 1;
            }
            worst = worst.max((a - b).abs());
        }
    }
    // The worked example: 5 x 4 x 3 m, beta 0.8, order 2.
    let room = RoomSpec::new(5.0, 4.0, 3.0, 0.8).unwrap();
    let geom = Geometry {
        source_xyz: [1.2, 1.1, 1.4],
        mic_xyz: [3.7, 2.9, 1.6],
    };
    let fast = rir::simulate_rir(&room, &geom, 2, 0.2).unwrap();
    let slow = common::brute_force_rir(&room, &geom, 2, 0.2);
    let nonzero = |t: &[f64]| t.iter().filter(|v| **v != 0.0).count();
    let same_support = fast
        .taps
        .iter()
        .zip(&slow)
        .all(|(a, b)| (*a == 0.0) == (*b == 0.0));
    let example_diff = fast
        .taps
        .iter()
        .zip(&slow)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert_eq!(common::image_count(2), 125);

    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12
        && index_mismatch == 0
        && same_support
        && example_diff <= 1e-12
        && secs < 10.0;
    report(
        1,
        "rir oracle",
        pass,
        &format!(
            "20 rooms, orders 0-3, max tap diff {worst:.1e}, support mismatches {index_mismatch}, \
             5x4x3 example {} taps, {secs:.1} s",
            nonzero(&fast.taps)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_reverberation_label_oracles() {
    let start = Instant::now();
    // Noise shaped by a decay envelope with a known 60 dB time.
    let mut decay_errors = Vec::new();
    for (i, t60) in [200.0, 400.0, 1000.0].into_iter().enumerate() {
        let env = common::exponential_decay(t60, 40_000);
        let mut rng = SeededRng::new(7, i as u64);
        let taps: Vec<f64> = env.iter().map(|e| e * rng.normal()).collect();
        let est = truth::t60_schroeder(&ImpulseResponse::from_taps(taps))
            .unwrap()
            .t60_ms;
        decay_errors.push((est - t60).abs() / t60);
    }
    let decay_ok = decay_errors.iter().all(|e| *e < 0.05);

    let two = |second: f64, at_ms: f64| {
        let mut taps = vec![0.0; 3200];
        taps[0] = 1.0;
        taps[(at_ms * 16.0) as usize] = second;
        ImpulseResponse::from_taps(taps)
    };
    let closed = [
        (truth::clarity(&two(1.0, 60.0), 50.0).unwrap(), 0.0),
        (
            truth::clarity(&two(0.5, 60.0), 50.0).unwrap(),
            10.0 * (1.0f64 / 0.25).log10(),
        ),
        (
            truth::clarity(&two(0.5, 30.0), 5.0).unwrap(),
            10.0 * (1.0f64 / 0.25).log10(),
        ),
        (
            truth::drr(&two(0.5, 30.0)).unwrap(),
            10.0 * (1.0f64 / 0.25).log10(),
        ),
        (truth::drr(&two(1.0, 1.0)).unwrap(), 60.0),
        (
            truth::clarity(&ImpulseResponse::from_taps(vec![1.0]), 50.0).unwrap(),
            60.0,
        ),
    ];
    let closed_ok = closed.iter().all(|(got, want)| (got - want).abs() < 1e-12);

    let cfg = RoomSamplingConfig {
        reflection_coeff: (0.7, 0.9),
        ..Default::default()
    };
    let mut rng = SeededRng::for_label(202, "acceptance/eyring");
    let mut ratios = Vec::new();
    for _ in 0..10 {
        let (room, geom) = rir::sample_room(&mut rng, &cfg).unwrap();
        let order = rir::default_max_order(room.reflection_coeff);
        let ir = rir::simulate_rir(&room, &geom, order, 2.0).unwrap();
        let est = truth::t60_schroeder(&ir).unwrap().t60_ms;
        ratios.push(est / truth::eyring_t60(&room));
    }
    let eyring_ok = ratios.iter().all(|r| (r - 1.0).abs() <= 0.25);

    let secs = start.elapsed().as_secs_f64();
    let pass = decay_ok && closed_ok && eyring_ok && secs < 30.0;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    report(
        2,
        "reverberation labels",
        pass,
        &format!(
            "decay rel errors [{}] ok={decay_ok}; closed forms ok={closed_ok}; \
             schroeder/eyring ratios [{}] ok={eyring_ok}; {secs:.1} s",
            fmt(&decay_errors),
            fmt(&ratios)
        ),
    );
    assert!(decay_ok, "decay estimates {decay_errors:?}");
    assert!(closed_ok, "closed forms {closed:?}");
    assert!(
        eyring_ok,
        "Schroeder T60 over Eyring T60 per room: {ratios:?}"
    );
    assert!(secs < 30.0);
}

fn random_recipe(rng: &mut SeededRng) -> DegradationRecipe {
    let with_reverb = rng.chance(0.5);
    let rir = with_reverb.then(|| {
        let (room, geom) = rir::sample_room(rng, &RoomSamplingConfig::default()).unwrap();
        rir::simulate_rir(&room, &geom, 8, 0.3).unwrap()
    });
    let classes = [
        NoiseClass::Ambient,
        NoiseClass::Babble,
        NoiseClass::Music,
        NoiseClass::Other,
        NoiseClass::White,
    ];
    let codec = match rng.below(3) {
        0 => CodecSpec::uncompressed(),
        1 => CodecSpec::new(CodecClass::SurrogateSpeech, rng.uniform(8.0, 64.0)).unwrap(),
        _ => CodecSpec::new(CodecClass::SurrogateMusic, rng.uniform(8.0, 64.0)).unwrap(),
    };
    DegradationRecipe {
        overlap: rng.chance(0.3).then(|| OverlapSpec {
            sir_db: rng.uniform(3.0, 12.0),
            rir: rir.clone(),
        }),
        rir,
        noise_class: classes[rng.below(classes.len())],
        snr_db: rng.uniform(0.0, 30.0),
        codec,
        peak_dbfs: rng.uniform(-10.0, -0.1),
    }
}

#[test]
fn criterion_03_degradation_contracts() {
    let bank = NoiseBank::builtin();
    let talkers: Vec<AudioBuffer> = (0..3)
        .map(|i| {
            let v = Voice::for_speaker(3, &format!("talker{i}"));
            speech::utterance(&v, 1.5, &mut SeededRng::new(3, i))
        })
        .collect();

    let mut rng = SeededRng::for_label(303, "acceptance/snr");
    let mut worst_snr = 0.0f64;
    for case in 0..100u64 {
        let voice = Voice::for_speaker(30, &format!("spk{}", case % 7));
        let clean = speech::utterance(&voice, rng.uniform(1.0, 2.0), &mut rng);
        let recipe = random_recipe(&mut rng);
        let (noise, _) = bank
            .draw(recipe.noise_class, clean.len(), &talkers, &mut rng)
            .unwrap();
        let codec = SurrogateCodec::new(recipe.codec).unwrap();
        let out = degrade::degrade(
            &clean,
            &recipe,
            Some(&talkers[case as usize % 3]),
            &noise,
            &codec,
            &mut rng,
        )
        .unwrap();
        let active = common::active_frames(clean.samples());
        let snr = common::measured_snr_db(out.speech.samples(), out.noise.samples(), &active);
        worst_snr = worst_snr.max((snr - recipe.snr_db).abs());
    }
    let snr_ok = worst_snr <= 0.05;

    let mut worst_conv = 0.0f64;
    let mut rng = SeededRng::for_label(304, "acceptance/conv");
    for case in 0..20 {
        let n = 1 + rng.below(20_000);
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let ir = if case % 2 == 0 {
            let (room, geom) = rir::sample_room(&mut rng, &RoomSamplingConfig::default()).unwrap();
            rir::simulate_rir(&room, &geom, 6, 0.25).unwrap()
        } else {
            let m = 1 + rng.below(3000);
            ImpulseResponse::from_taps((0..m).map(|_| rng.normal()).collect())
        };
        let fast = convolve_reverb(&AudioBuffer::new(x.clone()).unwrap(), &ir);
        let slow = common::convolve_direct(&x, &ir.taps);
        for (a, b) in fast.samples().iter().zip(&slow) {
            worst_conv = worst_conv.max((a - b).abs());
        }
    }
    let conv_ok = worst_conv <= 1e-9;

    // Whole chain twice with the same stream, then a corpus under two pool
    // sizes.
    let mut chain_ok = true;
    for case in 0..5u64 {
        let run = || {
            let mut rng = SeededRng::new(305, case);
            let voice = Voice::for_speaker(31, "spk");
            let clean = speech::utterance(&voice, 1.2, &mut rng);
            let recipe = random_recipe(&mut rng);
            let (noise, _) = bank
                .draw(recipe.noise_class, clean.len(), &talkers, &mut rng)
                .unwrap();
            let codec = SurrogateCodec::new(recipe.codec).unwrap();
            degrade::degrade(&clean, &recipe, Some(&talkers[0]), &noise, &codec, &mut rng)
                .unwrap()
        };
        let (a, b) = (run(), run());
        let bits = |d: &degrade::Degraded| {
            d.output
                .samples()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        chain_ok &= bits(&a) == bits(&b) && a == b;
    }
    let dir = tempfile::tempdir().unwrap();
    speech::generate_corpus(&dir.path().join("clean"), 3, 2, (1.2, 1.8), 8).unwrap();
    let cfg = SynthConfig {
        utterances_per_group: 1,
        ..Default::default()
    };
    for (threads, name) in [(1, "a"), (3, "b")] {
        pool(threads).install(|| {
            synth::synthesize_corpus(
                &dir.path().join("clean"),
                &bank,
                &cfg,
                9,
                &dir.path().join(name),
            )
            .unwrap()
        });
    }
    let corpus_ok = tree(&dir.path().join("a")) == tree(&dir.path().join("b"));

    let pass = snr_ok && conv_ok && chain_ok && corpus_ok;
    report(
        3,
        "degradation contracts",
        pass,
        &format!(
            "worst SNR error {worst_snr:.2e} dB over 100 chains, worst FFT convolution diff \
             {worst_conv:.1e}, chain bit-identical {chain_ok}, corpus identical across pools {corpus_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_gradients_match_finite_differences() {
    let start = Instant::now();
    let r = common::gradient_check(4, 1e-5);
    let secs = start.elapsed().as_secs_f64();
    let pass = r.checked == r.params && r.worst < 1e-4 && secs < 300.0;
    report(
        4,
        "gradient check",
        pass,
        &format!(
            "{} of {} entries, worst relative error {:.2e} at {}, {secs:.1} s",
            r.checked, r.params, r.worst, r.worst_at
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_overfits_a_toy_corpus() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    speech::generate_corpus(&d.join("clean"), 8, 4, (2.0, 3.0), 5).unwrap();
    let cfg = SynthConfig {
        utterances_per_group: 8,
        groups: vec![1, 2, 3, 4],
        ..Default::default()
    };
    let entries = synth::synthesize_corpus(
        &d.join("clean"),
        &NoiseBank::builtin(),
        &cfg,
        5,
        &d.join("corpus"),
    )
    .unwrap();
    assert_eq!(entries.len(), 32);
    let manifest = d.join("corpus/manifest.jsonl");
    let tcfg = TrainConfig {
        epochs: 200,
        batch_size: 8,
        val_fraction: 0.0,
        ..Default::default()
    };
    let model_cfg = ModelConfig::for_embed_dim(128).unwrap();
    let (_, rep) = train::train(&manifest, model_cfg, &tcfg, &d.join("run")).unwrap();
    let first = rep.epochs.first().unwrap().train.total;
    let last = rep.epochs.last().unwrap().train.total;
    let m = train::evaluate(&d.join("run/best.ckpt"), &manifest).unwrap();
    let codec = m.f1[1].unwrap_or(0.0);
    let overlap = m.f1[2].unwrap_or(0.0);
    let secs = start.elapsed().as_secs_f64();
    let pass = last < 0.1 * first && codec >= 0.95 && overlap >= 0.95 && secs < 1800.0;
    report(
        5,
        "overfit sanity",
        pass,
        &format!(
            "{} epochs on {} chunks, loss {first:.3} -> {last:.4}, codec F1 {codec:.3}, \
             overlap F1 {overlap:.3}, {secs:.0} s",
            rep.epochs.len(),
            m.chunks
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_clustering_trend() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let seed = 6;
    speech::generate_corpus(&d.join("clean"), 20, 15, (2.0, 3.0), seed).unwrap();
    let cfg = SynthConfig {
        utterances_per_group: 300,
        groups: vec![1],
        noise_classes: vec![NoiseClass::White, NoiseClass::Music],
        dry_fraction: 0.5,
        ..Default::default()
    };
    let corpus = d.join("corpus");
    let entries =
        synth::synthesize_corpus(&d.join("clean"), &NoiseBank::builtin(), &cfg, seed, &corpus)
            .unwrap();
    let split = synth::split_by_speaker(&entries, 0.2, seed);
    synth::write_manifest(&corpus.join("train.jsonl"), &split.train).unwrap();

    let tcfg = TrainConfig {
        epochs: 40,
        batch_size: 16,
        val_fraction: 0.1,
        patience: 0,
        ..Default::default()
    };
    let model_cfg = ModelConfig::for_embed_dim(64).unwrap();
    train::train(&corpus.join("train.jsonl"), model_cfg, &tcfg, &d.join("run")).unwrap();
    let (params, _) = model::load_checkpoint(&d.join("run/best.ckpt")).unwrap();
    let records = eval::embed_corpus(&params, &split.test, &corpus).unwrap();

    // Each property is scored on the held-out subset that holds the others
    // fixed: reverb on one noise type above 20 dB SNR, noise below 20 dB.
    let reverb_set = Filter::parse("noise==white,snr>20").unwrap().apply(&records);
    let noise_set = Filter::parse("snr<20").unwrap().apply(&records);
    let reverb = kmeans_f1(&reverb_set, LabelField::Reverb, 2, 0).unwrap();
    let noise = kmeans_f1(&noise_set, LabelField::Noise, 2, 0).unwrap();
    let all_noise = kmeans_f1(&records, LabelField::Noise, 2, 0).unwrap();
    let all_reverb = kmeans_f1(&records, LabelField::Reverb, 2, 0).unwrap();

    let secs = start.elapsed().as_secs_f64();
    let pass = noise.f1 >= 0.80 && reverb.f1 >= 0.85 && secs < 7200.0;
    report(
        6,
        "clustering trend",
        pass,
        &format!(
            "{} train / {} test utterances ({} dropped); noise F1 {:.3} on {} points, \
             reverb F1 {:.3} on {} points; unfiltered noise {:.3}, reverb {:.3}; {secs:.0} s",
            split.train.len(),
            split.test.len(),
            split.dropped,
            noise.f1,
            noise.points,
            reverb.f1,
            reverb.points,
            all_noise.f1,
            all_reverb.f1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_parameter_counts() {
    let reference_m = [0.57, 0.67, 0.97, 3.10, 14.65];
    let mut counts = Vec::new();
    let mut within = true;
    let mut consistent = true;
    for (dim, r) in EMBED_DIMS.iter().zip(reference_m) {
        let cfg = ModelConfig::for_embed_dim(*dim).unwrap();
        let n = count_params(&cfg);
        consistent &= ModelParams::init(cfg, 0).unwrap().param_count() == n;
        within &= (n as f64 / 1e6 - r).abs() <= 0.3 * r;
        counts.push(n);
    }
    let increasing = counts.windows(2).all(|w| w[0] < w[1]);
    let pass = within && increasing && consistent;
    report(
        7,
        "parameter counts",
        pass,
        &format!("{counts:?} for dims {EMBED_DIMS:?}"),
    );
    assert!(pass);
}

fn record(i: usize, vector: Vec<f64>, noise: &str) -> EmbeddingRecord {
    EmbeddingRecord {
        vector,
        utterance_id: format!("u{i:03}"),
        speaker_id: format!("spk{}", i % 5),
        noise_class: noise.into(),
        reverb_present: i % 2 == 0,
        overlap: false,
        snr_db: Some(10.0),
        codec_class: None,
        group_id: Some(1),
    }
}

#[test]
fn criterion_08_evaluation_machinery() {
    let mut rng = SeededRng::for_label(808, "acceptance/blobs");
    let names = ["ambient", "music", "white"];
    let blobs: Vec<EmbeddingRecord> = (0..150)
        .map(|i| {
            let c = i % 3;
            let v = (0..8)
                .map(|k| if k == c { 10.0 } else { 0.0 } + 0.1 * rng.normal())
                .collect();
            record(i, v, names[c])
        })
        .collect();
    let a = kmeans_f1(&blobs, LabelField::Noise, 3, 1).unwrap();
    let b = kmeans_f1(&blobs, LabelField::Noise, 3, 1).unwrap();
    let blobs_ok = a.f1 == 1.0;

    let mut hungarian_ok = true;
    let mut strictly_better = 0;
    for case in 0..50 {
        let k = 2 + case % 4;
        // Half derived from noisy clusterings, half arbitrary score tables.
        let f1 = if case % 2 == 0 {
            let clusters: Vec<usize> = (0..60).map(|_| rng.below(k)).collect();
            let labels: Vec<usize> = clusters
                .iter()
                .map(|&c| if rng.chance(0.5) { c } else { rng.below(k) })
                .collect();
            eval::f1_matrix(&clusters, &labels, k)
        } else {
            (0..k)
                .map(|_| (0..k).map(|_| rng.uniform(0.0, 1.0)).collect())
                .collect()
        };
        let cost: Vec<Vec<f64>> = f1.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let total = |m: &[usize]| m.iter().enumerate().map(|(c, &l)| f1[c][l]).sum::<f64>();
        let h = total(&hungarian(&cost));
        let g = total(&greedy_assignment(&f1));
        let best = permutations(k)
            .iter()
            .map(|p| total(p))
            .fold(f64::NEG_INFINITY, f64::max);
        hungarian_ok &= h >= g - 1e-12 && (h - best).abs() < 1e-12;
        if h > g + 1e-12 {
            strictly_better += 1;
        }
    }

    let identical = cosine_distance(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0]);
    let orthogonal = cosine_distance(&[1.0, 0.0, 2.0], &[0.0, 5.0, 0.0]);
    let cosine_ok = identical == Some(0.0) && orthogonal == Some(1.0);

    let report_a = eval::cosine_distance_report(&blobs, "spk0").unwrap();
    let report_b = eval::cosine_distance_report(&blobs, "spk0").unwrap();
    let pts: Vec<Vec<f64>> = blobs.iter().take(60).map(|r| r.vector.clone()).collect();
    let tcfg = eval::TsneConfig {
        perplexity: 10.0,
        iterations: 300,
        seed: 4,
        ..Default::default()
    };
    let ya = eval::tsne(&pts, &tcfg).unwrap();
    let yb = eval::tsne(&pts, &tcfg).unwrap();
    let deterministic = a == b && report_a == report_b && ya == yb;

    let pass = blobs_ok && hungarian_ok && cosine_ok && deterministic;
    report(
        8,
        "evaluation machinery",
        pass,
        &format!(
            "blob F1 {}, hungarian optimal and >= greedy on 50 matrices ({strictly_better} strictly), \
             cosine identical {identical:?} orthogonal {orthogonal:?}, deterministic {deterministic}",
            a.f1
        ),
    );
    assert!(pass);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Twelve utterances covering all six groups.
fn small_corpus(d: &Path, seed: u64) -> PathBuf {
    speech::generate_corpus(&d.join("clean"), 4, 2, (1.5, 2.5), seed).unwrap();
    let cfg = SynthConfig {
        utterances_per_group: 2,
        ..Default::default()
    };
    synth::synthesize_corpus(
        &d.join("clean"),
        &NoiseBank::builtin(),
        &cfg,
        seed,
        &d.join("corpus"),
    )
    .unwrap();
    d.join("corpus/manifest.jsonl")
}

#[test]
fn criterion_09_ablation_plumbing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = small_corpus(d, 12);
    let model_cfg = ModelConfig::for_embed_dim(32).unwrap();
    let run = |ablations: Vec<Ablation>, name: &str| {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            val_fraction: 0.0,
            ablations,
            ..Default::default()
        };
        let out = d.join(name);
        train::train(&manifest, model_cfg, &cfg, &out).unwrap();
        let ckpt = out.join("best.ckpt");
        let (_, header) = model::load_checkpoint(&ckpt).unwrap();
        let names: BTreeSet<String> = header.tensors.into_iter().map(|t| t.name).collect();
        let csv = train::metrics_csv(&train::evaluate(&ckpt, &manifest).unwrap());
        (names, csv)
    };
    let (full_names, full_csv) = run(vec![], "full");
    let cells = |csv: &str| -> Vec<Vec<String>> {
        csv.lines()
            .map(|l| l.split(',').map(String::from).collect())
            .collect()
    };
    let full = cells(&full_csv);

    let mut ok = true;
    let mut details = Vec::new();
    for (flag, column) in [("nn", 11), ("nc", 12), ("no", 13)] {
        let ab = Ablation::parse(flag).unwrap();
        let (names, csv) = run(vec![ab], flag);
        let prefix = format!("head.{}.", ab.task().name());
        let removed: BTreeSet<String> = full_names.difference(&names).cloned().collect();
        let expected: BTreeSet<String> = full_names
            .iter()
            .filter(|n| n.starts_with(&prefix))
            .cloned()
            .collect();
        let added = names.difference(&full_names).count();
        let rows = cells(&csv);
        let format_ok = rows[0] == full[0]
            && rows[0] == train::metrics_header()
            && rows[1].len() == full[1].len()
            && rows[1][column].is_empty()
            && (0..rows[1].len())
                .filter(|&c| c != column)
                .all(|c| rows[1][c].is_empty() == full[1][c].is_empty());
        let this_ok = !expected.is_empty() && removed == expected && added == 0 && format_ok;
        details.push(format!("{flag}: -{} tensors, format ok {format_ok}", removed.len()));
        ok &= this_ok;
    }
    report(9, "ablation plumbing", ok, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_10_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // WAV: one write quantizes to 16-bit; after that everything is exact.
    let mut rng = SeededRng::for_label(1010, "acceptance/wav");
    let buf = AudioBuffer::new((0..8000).map(|_| 0.3 * rng.normal().clamp(-3.0, 3.0)).collect())
        .unwrap();
    audio::write_wav(&buf, d.join("a.wav")).unwrap();
    let back = audio::read_wav(d.join("a.wav")).unwrap();
    audio::write_wav(&back, d.join("b.wav")).unwrap();
    let quant_err = buf
        .samples()
        .iter()
        .zip(back.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let wav_ok = back == audio::quantize_pcm16(&buf)
        && std::fs::read(d.join("a.wav")).unwrap() == std::fs::read(d.join("b.wav")).unwrap()
        && quant_err <= 0.5 / 32768.0 + 1e-15;

    let manifest = small_corpus(d, 21);
    let entries = synth::read_manifest(&manifest).unwrap();
    let copy = d.join("corpus/copy.jsonl");
    synth::write_manifest(&copy, &entries).unwrap();
    let manifest_ok = std::fs::read(&manifest).unwrap() == std::fs::read(&copy).unwrap()
        && synth::read_manifest(&copy).unwrap() == entries;

    let params = ModelParams::init(ModelConfig::for_embed_dim(32).unwrap(), 3).unwrap();
    let mut meta = BTreeMap::new();
    meta.insert("note".to_string(), serde_json::json!("round trip"));
    model::save_checkpoint(&params, meta.clone(), &d.join("a.ckpt")).unwrap();
    let (loaded, _) = model::load_checkpoint(&d.join("a.ckpt")).unwrap();
    model::save_checkpoint(&loaded, meta, &d.join("b.ckpt")).unwrap();
    let (again, _) = model::load_checkpoint(&d.join("b.ckpt")).unwrap();
    let ckpt_ok = std::fs::read(d.join("a.ckpt")).unwrap() == std::fs::read(d.join("b.ckpt")).unwrap()
        && loaded == again;

    let records = eval::embed_corpus(&loaded, &entries, &d.join("corpus")).unwrap();
    let mut dump_ok = true;
    for (enc, name) in [(VectorEncoding::Decimal, "dec"), (VectorEncoding::Base64, "b64")] {
        let a = d.join(format!("{name}_a.jsonl"));
        let b = d.join(format!("{name}_b.jsonl"));
        eval::write_dump(&a, &records, "xane", enc).unwrap();
        let (_, read) = eval::read_dump(&a).unwrap();
        eval::write_dump(&b, &read, "xane", enc).unwrap();
        let (_, read2) = eval::read_dump(&b).unwrap();
        let f32_equal = records.iter().zip(&read).all(|(r, s)| {
            r.vector
                .iter()
                .zip(&s.vector)
                .all(|(x, y)| (*x as f32) as f64 == *y)
        });
        dump_ok &= std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap()
            && read == read2
            && read.len() == records.len()
            && f32_equal;
    }

    let pass = wav_ok && manifest_ok && ckpt_ok && dump_ok;
    report(
        10,
        "format round-trips",
        pass,
        &format!(
            "wav {wav_ok} (16-bit quantization error {quant_err:.1e}), manifest {manifest_ok} \
             ({} entries), checkpoint {ckpt_ok}, embedding dump {dump_ok}",
            entries.len()
        ),
    );
    assert!(pass);
}
