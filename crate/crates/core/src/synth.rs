//! Corpus synthesis into six groups (three codec conditions, with and
//! without overlapped speech), per-chunk labels and the JSONL manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioBuffer, SAMPLE_RATE};
use crate::degrade::{
    self, stem_snr_db, CodecClass, CodecSpec, DegradationRecipe, Degraded, NoiseBank, NoiseClass,
    OverlapSpec, SurrogateCodec, VAD_FRAME,
};
use crate::rir::{self, Geometry, RoomSamplingConfig, RoomSpec};
use crate::rng::SeededRng;
use crate::truth::{self, ReverbLabels};

pub const MANIFEST_VERSION: u32 = 1;
/// Samples per labelled chunk (one second).
pub const CHUNK_SAMPLES: usize = SAMPLE_RATE as usize;
pub const PESQ_RANGE: (f64, f64) = (-0.5, 4.5);
pub const ESTOI_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no usable clean WAV files under {0}")]
    EmptyCleanDir(PathBuf),
    #[error("overlap groups need at least 2 speakers, found {0}")]
    InsufficientSpeakers(usize),
    #[error("utterance {id} is shorter than one chunk ({samples} samples)")]
    UtteranceTooShort { id: String, samples: usize },
    #[error("invalid synthesis config: {0}")]
    Config(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("utterance {id}: {source}")]
    Degrade {
        id: String,
        #[source]
        source: degrade::DegradeError,
    },
    #[error(transparent)]
    Rir(#[from] rir::RirError),
    #[error(transparent)]
    Truth(#[from] truth::TruthError),
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Labels for one second of audio: eleven real-valued targets and three
/// categorical ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkLabel {
    pub c50_db: f64,
    pub c5_db: f64,
    pub drr_db: f64,
    pub t60_ms: f64,
    pub room_volume_m3: f64,
    pub reflection_coeff: f64,
    /// Absent for chunks without active speech.
    pub snr_db: Option<f64>,
    pub vad_fraction: f64,
    pub pesq: Option<f64>,
    pub estoi: Option<f64>,
    pub bitrate_kbps: f64,
    pub noise_class: NoiseClass,
    pub codec_class: CodecClass,
    pub overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSummary {
    pub reverb: bool,
    pub room: Option<RoomSpec>,
    pub geometry: Option<Geometry>,
    pub rir_samples: usize,
    pub max_image_order: usize,
    pub noise_class: NoiseClass,
    pub noise_source: String,
    pub snr_db: f64,
    pub achieved_snr_db: f64,
    pub overlap: bool,
    pub sir_db: Option<f64>,
    pub interferer_id: Option<String>,
    pub interferer_geometry: Option<Geometry>,
    pub codec: CodecSpec,
    pub peak_dbfs: f64,
    /// Every speaker whose speech is audible in the output (target,
    /// interferer, babble talkers).
    pub speech_sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub schema_version: u32,
    pub utterance_id: String,
    /// Relative to the manifest's directory.
    pub wav_path: String,
    pub speaker_id: String,
    pub group_id: u8,
    pub clean_path: String,
    pub recipe: RecipeSummary,
    pub chunk_labels: Vec<(usize, ChunkLabel)>,
}

impl ManifestEntry {
    pub fn wav_file(&self, manifest_dir: &Path) -> PathBuf {
        manifest_dir.join(&self.wav_path)
    }

    pub fn reverb_present(&self) -> bool {
        self.recipe.reverb
    }
}

/// Group ids 1-6: codec class major, overlap minor.
pub fn group_id(codec: CodecClass, overlap: bool) -> u8 {
    (codec.index() * 2 + overlap as usize + 1) as u8
}

pub fn group_conditions(group: u8) -> Option<(CodecClass, bool)> {
    let g = group.checked_sub(1)? as usize;
    CodecClass::ALL.get(g / 2).map(|c| (*c, g % 2 == 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub utterances_per_group: usize,
    pub groups: Vec<u8>,
    pub noise_classes: Vec<NoiseClass>,
    /// Probability that an utterance is left dry.
    pub dry_fraction: f64,
    pub snr_db: (f64, f64),
    pub sir_db: (f64, f64),
    pub peak_dbfs: (f64, f64),
    pub bitrate_kbps: (f64, f64),
    pub room: RoomSamplingConfig,
    pub rir_duration_s: f64,
    pub keep_stems: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            utterances_per_group: 10,
            groups: (1..=6).collect(),
            noise_classes: NoiseClass::ALL.to_vec(),
            dry_fraction: 0.0,
            snr_db: degrade::SNR_RANGE_DB,
            sir_db: degrade::SIR_RANGE_DB,
            peak_dbfs: degrade::PEAK_RANGE_DBFS,
            bitrate_kbps: degrade::BITRATE_RANGE_KBPS,
            room: RoomSamplingConfig::default(),
            rir_duration_s: 2.0,
            keep_stems: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.utterances_per_group == 0 {
            return bad("utterances_per_group must be at least 1".into());
        }
        if self.groups.is_empty() || self.groups.iter().any(|g| group_conditions(*g).is_none()) {
            return bad(format!(
                "groups must be a non-empty subset of 1..=6, got {:?}",
                self.groups
            ));
        }
        if self.noise_classes.is_empty() {
            return bad("noise_classes is empty".into());
        }
        if !(0.0..=1.0).contains(&self.dry_fraction) {
            return bad(format!("dry_fraction {} outside [0, 1]", self.dry_fraction));
        }
        let within = |name: &str, r: (f64, f64), lim: (f64, f64)| {
            if r.0 > r.1 || r.0 < lim.0 || r.1 > lim.1 {
                Err(SynthError::Config(format!(
                    "{name} range {r:?} must lie within {lim:?}"
                )))
            } else {
                Ok(())
            }
        };
        within("snr_db", self.snr_db, degrade::SNR_RANGE_DB)?;
        within("sir_db", self.sir_db, degrade::SIR_RANGE_DB)?;
        within("peak_dbfs", self.peak_dbfs, degrade::PEAK_RANGE_DBFS)?;
        within(
            "bitrate_kbps",
            self.bitrate_kbps,
            degrade::BITRATE_RANGE_KBPS,
        )?;
        if !(self.rir_duration_s > 0.0) {
            return bad("rir_duration_s must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanUtterance {
    pub id: String,
    pub speaker_id: String,
    pub path: PathBuf,
}

/// All WAVs below `dir`; the speaker is the name of the containing
/// directory. Sorted by path.
pub fn scan_clean_dir(dir: &Path) -> Result<Vec<CleanUtterance>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths.sort();
    let list: Vec<CleanUtterance> = paths
        .into_iter()
        .map(|p| {
            let speaker = p
                .parent()
                .filter(|d| d != &dir)
                .and_then(|d| d.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unknown".into());
            CleanUtterance {
                id: p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                speaker_id: speaker,
                path: p,
            }
        })
        .collect();
    if list.is_empty() {
        return Err(SynthError::EmptyCleanDir(dir.to_path_buf()));
    }
    Ok(list)
}

/// Per-chunk labels. Reverberation, class and codec labels are constant
/// over the utterance; VAD and SNR are measured per chunk from the stems.
pub fn chunk_labels(
    utterance_id: &str,
    degraded: &Degraded,
    recipe: &DegradationRecipe,
    reverb: &ReverbLabels,
) -> Result<Vec<ChunkLabel>> {
    let len = degraded.output.len();
    let n = len / CHUNK_SAMPLES;
    if n == 0 {
        return Err(SynthError::UtteranceTooShort {
            id: utterance_id.to_string(),
            samples: len,
        });
    }
    let frames_per_chunk = CHUNK_SAMPLES / VAD_FRAME;
    Ok((0..n)
        .map(|k| {
            let span = k * CHUNK_SAMPLES..(k + 1) * CHUNK_SAMPLES;
            let vad = &degraded.clean_vad[k * frames_per_chunk..(k + 1) * frames_per_chunk];
            let active = vad.iter().filter(|&&a| a).count();
            let vad_fraction = active as f64 / frames_per_chunk as f64;
            let snr_db = if active == 0 {
                None
            } else {
                stem_snr_db(
                    &degraded.speech.samples()[span.clone()],
                    &degraded.noise.samples()[span],
                    vad,
                )
            };
            ChunkLabel {
                c50_db: reverb.c50_db,
                c5_db: reverb.c5_db,
                drr_db: reverb.drr_db,
                t60_ms: reverb.t60_ms,
                room_volume_m3: reverb.room_volume_m3,
                reflection_coeff: reverb.reflection_coeff,
                snr_db,
                vad_fraction,
                pesq: None,
                estoi: None,
                bitrate_kbps: recipe.codec.label_kbps(),
                noise_class: recipe.noise_class,
                codec_class: recipe.codec.codec_class,
                overlap: recipe.overlap.is_some(),
            }
        })
        .collect())
}

struct Job {
    group: u8,
    utterance_id: String,
    clean: usize,
}

/// Synthesizes the corpus under `out` and writes `out/manifest.jsonl`.
/// Work is spread over the current rayon pool; the result does not depend
/// on its size.
pub fn synthesize_corpus(
    clean_dir: &Path,
    noise: &NoiseBank,
    config: &SynthConfig,
    seed: u64,
    out: &Path,
) -> Result<Vec<ManifestEntry>> {
    config.validate()?;
    let clean = scan_clean_dir(clean_dir)?;
    let speakers: BTreeSet<&str> = clean.iter().map(|c| c.speaker_id.as_str()).collect();
    let wants_overlap = config
        .groups
        .iter()
        .any(|g| group_conditions(*g).is_some_and(|(_, o)| o));
    if wants_overlap && speakers.len() < 2 {
        return Err(SynthError::InsufficientSpeakers(speakers.len()));
    }

    let mut groups = config.groups.clone();
    groups.sort_unstable();
    groups.dedup();
    let mut jobs = Vec::new();
    for &g in &groups {
        let mut order: Vec<usize> = (0..clean.len()).collect();
        SeededRng::for_label(seed, &format!("select/{g}")).shuffle(&mut order);
        for i in 0..config.utterances_per_group {
            jobs.push(Job {
                group: g,
                utterance_id: format!("g{g}_{i:06}"),
                clean: order[i % order.len()],
            });
        }
    }
    std::fs::create_dir_all(out)?;
    let entries = jobs
        .par_iter()
        .map(|job| synthesize_one(job, &clean, noise, config, seed, out))
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out.join("manifest.jsonl"), &entries)?;
    Ok(entries)
}

fn pick_other_speaker<'a>(
    clean: &'a [CleanUtterance],
    speaker: &str,
    rng: &mut SeededRng,
) -> Option<&'a CleanUtterance> {
    let others: Vec<&CleanUtterance> = clean.iter().filter(|c| c.speaker_id != speaker).collect();
    (!others.is_empty()).then(|| others[rng.below(others.len())])
}

fn synthesize_one(
    job: &Job,
    clean: &[CleanUtterance],
    noise_bank: &NoiseBank,
    config: &SynthConfig,
    seed: u64,
    out: &Path,
) -> Result<ManifestEntry> {
    let id = &job.utterance_id;
    let (codec_class, overlap) = group_conditions(job.group).expect("validated");
    let source = &clean[job.clean];
    let speech = audio::read_wav(&source.path)?;
    if speech.len() < CHUNK_SAMPLES {
        return Err(SynthError::UtteranceTooShort {
            id: source.id.clone(),
            samples: speech.len(),
        });
    }
    let mut rng = SeededRng::for_label(seed, &format!("utt/{id}"));
    let mut speech_sources = vec![source.speaker_id.clone()];

    // Room and responses.
    let reverb = !rng.chance(config.dry_fraction);
    let (room, geometry, ir) = if reverb {
        let (room, geom) = rir::sample_room(&mut rng, &config.room)?;
        let order = rir::default_max_order(room.reflection_coeff);
        let ir = rir::simulate_rir(&room, &geom, order, config.rir_duration_s)?;
        (Some(room), Some(geom), Some(ir))
    } else {
        (None, None, None)
    };
    let reverb_labels = match &ir {
        Some(ir) => truth::reverb_labels(ir)?,
        None => ReverbLabels::anechoic(),
    };

    // Interferer from another speaker, in the same room.
    let mut interferer = None;
    let mut overlap_spec = None;
    let mut interferer_geometry = None;
    if overlap {
        let other = pick_other_speaker(clean, &source.speaker_id, &mut rng)
            .ok_or(SynthError::InsufficientSpeakers(1))?;
        let sir_db = rng.uniform(config.sir_db.0, config.sir_db.1);
        let intf_ir = match &room {
            Some(room) => {
                let g = rir::sample_geometry(room, &mut rng, &config.room)?;
                interferer_geometry = Some(g);
                let order = rir::default_max_order(room.reflection_coeff);
                Some(rir::simulate_rir(room, &g, order, config.rir_duration_s)?)
            }
            None => None,
        };
        speech_sources.push(other.speaker_id.clone());
        interferer = Some((other.id.clone(), audio::read_wav(&other.path)?));
        overlap_spec = Some(OverlapSpec {
            sir_db,
            rir: intf_ir,
        });
    }

    // Noise.
    let noise_class = config.noise_classes[rng.below(config.noise_classes.len())];
    let mut pool = Vec::new();
    if noise_class == NoiseClass::Babble && !noise_bank.has_files(noise_class) {
        for _ in 0..6 {
            let talker = pick_other_speaker(clean, &source.speaker_id, &mut rng).unwrap_or(source);
            speech_sources.push(talker.speaker_id.clone());
            pool.push(audio::read_wav(&talker.path)?);
        }
    }
    let mut noise_rng = rng.derive("noise");
    let (noise, noise_source) = noise_bank
        .draw(noise_class, speech.len(), &pool, &mut noise_rng)
        .map_err(|source| SynthError::Degrade {
            id: id.clone(),
            source,
        })?;

    let snr_db = rng.uniform(config.snr_db.0, config.snr_db.1);
    let codec = match codec_class {
        CodecClass::Uncompressed => CodecSpec::uncompressed(),
        c => CodecSpec::new(c, rng.uniform(config.bitrate_kbps.0, config.bitrate_kbps.1)).map_err(
            |source| SynthError::Degrade {
                id: id.clone(),
                source,
            },
        )?,
    };
    let peak_dbfs = rng.uniform(config.peak_dbfs.0, config.peak_dbfs.1);
    let recipe = DegradationRecipe {
        rir: ir.clone(),
        noise_class,
        snr_db,
        overlap: overlap_spec,
        codec,
        peak_dbfs,
    };
    let wrap = |source| SynthError::Degrade {
        id: id.clone(),
        source,
    };
    let codec_impl = SurrogateCodec::new(codec).map_err(wrap)?;
    let mut mix_rng = rng.derive("mix");
    let degraded = degrade::degrade(
        &speech,
        &recipe,
        interferer.as_ref().map(|(_, b)| b),
        &noise,
        &codec_impl,
        &mut mix_rng,
    )
    .map_err(wrap)?;
    let labels = chunk_labels(id, &degraded, &recipe, &reverb_labels)?;

    let rel = format!("{}/{id}.wav", job.group);
    let wav = out.join(&rel);
    std::fs::create_dir_all(wav.parent().expect("has parent"))?;
    let report = audio::write_wav(&degraded.output, &wav)?;
    if report.clipped() {
        log::warn!("{id}: {} samples clipped", report.clipped_samples);
    }
    if config.keep_stems {
        let dir = out.join(format!("{}/stems", job.group));
        std::fs::create_dir_all(&dir)?;
        audio::write_wav_f32(speech.samples(), dir.join(format!("{id}_clean.wav")))?;
        audio::write_wav_f32(
            degraded.speech.samples(),
            dir.join(format!("{id}_speech.wav")),
        )?;
        audio::write_wav_f32(
            degraded.noise.samples(),
            dir.join(format!("{id}_noise.wav")),
        )?;
        audio::write_wav_f32(
            degraded.pre_codec.samples(),
            dir.join(format!("{id}_precodec.wav")),
        )?;
    }

    speech_sources.sort();
    speech_sources.dedup();
    Ok(ManifestEntry {
        schema_version: MANIFEST_VERSION,
        utterance_id: id.clone(),
        wav_path: rel,
        speaker_id: source.speaker_id.clone(),
        group_id: job.group,
        clean_path: source.path.display().to_string(),
        recipe: RecipeSummary {
            reverb,
            room,
            geometry,
            rir_samples: ir.as_ref().map(|i| i.taps.len()).unwrap_or(0),
            max_image_order: room
                .map(|r| rir::default_max_order(r.reflection_coeff))
                .unwrap_or(0),
            noise_class,
            noise_source,
            snr_db,
            achieved_snr_db: degraded.achieved_snr_db,
            overlap,
            sir_db: recipe.overlap.as_ref().map(|o| o.sir_db),
            interferer_id: interferer.map(|(i, _)| i),
            interferer_geometry,
            codec,
            peak_dbfs,
            speech_sources,
        },
        chunk_labels: labels.into_iter().enumerate().collect(),
    })
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(|e| SynthError::Manifest {
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| SynthError::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MANIFEST_VERSION as u64 => {}
            Some(v) => {
                return Err(SynthError::Manifest {
                    line: i + 1,
                    msg: format!("schema_version {v}, this build reads {MANIFEST_VERSION}"),
                })
            }
            None => {
                return Err(SynthError::Manifest {
                    line: i + 1,
                    msg: "missing schema_version".into(),
                })
            }
        }
        let entry: ManifestEntry =
            serde_json::from_value(value).map_err(|e| SynthError::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })?;
        validate_entry(&entry).map_err(|msg| SynthError::Manifest { line: i + 1, msg })?;
        out.push(entry);
    }
    Ok(out)
}

fn validate_entry(e: &ManifestEntry) -> std::result::Result<(), String> {
    for (k, (idx, l)) in e.chunk_labels.iter().enumerate() {
        if *idx != k {
            return Err(format!("chunk indices not contiguous at {k}"));
        }
        if !(0.0..=1.0).contains(&l.vad_fraction) {
            return Err(format!("vad_fraction {} outside [0, 1]", l.vad_fraction));
        }
        if let Some(p) = l.pesq {
            if !(PESQ_RANGE.0..=PESQ_RANGE.1).contains(&p) {
                return Err(format!("pesq {p} outside {PESQ_RANGE:?}"));
            }
        }
        if let Some(s) = l.estoi {
            if !(ESTOI_RANGE.0..=ESTOI_RANGE.1).contains(&s) {
                return Err(format!("estoi {s} outside {ESTOI_RANGE:?}"));
            }
        }
    }
    if group_conditions(e.group_id).is_none() {
        return Err(format!("group_id {} outside 1..=6", e.group_id));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    /// Entries mixing speakers from both sides.
    pub dropped: usize,
    pub test_speakers: Vec<String>,
}

/// Speaker-disjoint split. An entry goes to a side only when every speaker
/// audible in it belongs to that side; mixed entries are dropped.
pub fn split_by_speaker(entries: &[ManifestEntry], test_fraction: f64, seed: u64) -> Split {
    let mut speakers: Vec<String> = entries
        .iter()
        .map(|e| e.speaker_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    SeededRng::for_label(seed, "split").shuffle(&mut speakers);
    let n_test = ((speakers.len() as f64 * test_fraction).round() as usize)
        .min(speakers.len().saturating_sub(1));
    let test: BTreeSet<String> = speakers[..n_test].iter().cloned().collect();
    let mut out = Split {
        train: Vec::new(),
        test: Vec::new(),
        dropped: 0,
        test_speakers: test.iter().cloned().collect(),
    };
    for e in entries {
        let mut all = e.recipe.speech_sources.clone();
        all.push(e.speaker_id.clone());
        let in_test = all.iter().filter(|s| test.contains(*s)).count();
        if in_test == all.len() {
            out.test.push(e.clone());
        } else if in_test == 0 {
            out.train.push(e.clone());
        } else {
            out.dropped += 1;
        }
    }
    out
}

/// Merges externally computed PESQ/ESTOI values. CSV columns:
/// `utterance_id,chunk_index,pesq,estoi`; an empty `chunk_index` applies
/// the row to every chunk, an empty value leaves the field untouched.
pub fn join_labels(entries: &mut [ManifestEntry], csv_text: &str) -> Result<usize> {
    let bad = |line: usize, msg: String| SynthError::Manifest { line, msg };
    let mut rows: BTreeMap<&str, Vec<(Option<usize>, Option<f64>, Option<f64>)>> = BTreeMap::new();
    for (i, line) in csv_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("utterance_id")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 columns, got {}", f.len())));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| bad(i + 1, format!("not a number: {s:?}")))
            }
        };
        let chunk = if f[1].is_empty() {
            None
        } else {
            Some(
                f[1].parse()
                    .map_err(|_| bad(i + 1, format!("bad chunk index {:?}", f[1])))?,
            )
        };
        let (pesq, estoi) = (num(f[2])?, num(f[3])?);
        if pesq.is_some_and(|p| !(PESQ_RANGE.0..=PESQ_RANGE.1).contains(&p)) {
            return Err(bad(i + 1, "pesq out of range".into()));
        }
        if estoi.is_some_and(|p| !(ESTOI_RANGE.0..=ESTOI_RANGE.1).contains(&p)) {
            return Err(bad(i + 1, "estoi out of range".into()));
        }
        rows.entry(f[0]).or_default().push((chunk, pesq, estoi));
    }
    let mut updated = 0;
    for e in entries.iter_mut() {
        let Some(list) = rows.get(e.utterance_id.as_str()) else {
            continue;
        };
        for (idx, label) in e.chunk_labels.iter_mut() {
            for (chunk, pesq, estoi) in list {
                if chunk.is_none_or(|c| c == *idx) {
                    if pesq.is_some() {
                        label.pesq = *pesq;
                    }
                    if estoi.is_some() {
                        label.estoi = *estoi;
                    }
                    updated += 1;
                }
            }
        }
    }
    Ok(updated)
}

/// Mean of per-chunk labels, used when comparing to utterance-level
/// figures. `None` fields stay `None` unless some chunk has a value.
pub fn utterance_mean(labels: &[ChunkLabel]) -> Option<ChunkLabel> {
    let first = *labels.first()?;
    let n = labels.len() as f64;
    let mean = |f: &dyn Fn(&ChunkLabel) -> f64| labels.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&ChunkLabel) -> Option<f64>| {
        let v: Vec<f64> = labels.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some(ChunkLabel {
        snr_db: mean_opt(&|l| l.snr_db),
        vad_fraction: mean(&|l| l.vad_fraction),
        pesq: mean_opt(&|l| l.pesq),
        estoi: mean_opt(&|l| l.estoi),
        ..first
    })
}

pub fn load_entry_audio(entry: &ManifestEntry, manifest_dir: &Path) -> Result<AudioBuffer> {
    Ok(audio::read_wav(entry.wav_file(manifest_dir))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speech;

    fn corpus(dir: &Path, speakers: usize) {
        speech::generate_corpus(dir, speakers, 2, (1.3, 2.2), 3).unwrap();
    }

    #[test]
    fn groups_map_both_ways() {
        for g in 1..=6u8 {
            let (c, o) = group_conditions(g).unwrap();
            assert_eq!(group_id(c, o), g);
        }
        assert!(group_conditions(0).is_none());
        assert!(group_conditions(7).is_none());
    }

    #[test]
    fn one_per_group_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let clean = dir.path().join("clean");
        corpus(&clean, 3);
        let cfg = SynthConfig {
            utterances_per_group: 1,
            rir_duration_s: 0.6,
            ..SynthConfig::default()
        };
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let a = synthesize_corpus(&clean, &NoiseBank::builtin(), &cfg, 7, &out_a).unwrap();
        let b = synthesize_corpus(&clean, &NoiseBank::builtin(), &cfg, 7, &out_b).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        let groups: BTreeSet<u8> = a.iter().map(|e| e.group_id).collect();
        assert_eq!(groups.len(), 6);
        assert_eq!(
            std::fs::read(out_a.join("manifest.jsonl")).unwrap(),
            std::fs::read(out_b.join("manifest.jsonl")).unwrap()
        );
        for e in &a {
            assert_eq!(
                std::fs::read(e.wav_file(&out_a)).unwrap(),
                std::fs::read(e.wav_file(&out_b)).unwrap()
            );
            let (codec, overlap) = group_conditions(e.group_id).unwrap();
            for (_, l) in &e.chunk_labels {
                assert_eq!(l.codec_class, codec);
                assert_eq!(l.overlap, overlap);
            }
            assert_eq!(e.recipe.interferer_id.is_some(), overlap);
        }
        let back = read_manifest(&out_a.join("manifest.jsonl")).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn overlap_needs_two_speakers() {
        let dir = tempfile::tempdir().unwrap();
        let clean = dir.path().join("clean");
        corpus(&clean, 1);
        let cfg = SynthConfig {
            utterances_per_group: 1,
            ..SynthConfig::default()
        };
        let r = synthesize_corpus(
            &clean,
            &NoiseBank::builtin(),
            &cfg,
            1,
            &dir.path().join("o"),
        );
        assert!(matches!(r, Err(SynthError::InsufficientSpeakers(1))));
        assert!(matches!(
            scan_clean_dir(&dir.path().join("o")),
            Err(SynthError::EmptyCleanDir(_)) | Err(SynthError::Io(_))
        ));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = SynthConfig {
            snr_db: (-5.0, 10.0),
            ..SynthConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(SynthError::Config(_))));
        let cfg = SynthConfig {
            groups: vec![7],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn label() -> ChunkLabel {
        ChunkLabel {
            c50_db: 10.0,
            c5_db: 3.0,
            drr_db: 1.0,
            t60_ms: 400.0,
            room_volume_m3: 60.0,
            reflection_coeff: 0.6,
            snr_db: Some(12.0),
            vad_fraction: 0.5,
            pesq: None,
            estoi: None,
            bitrate_kbps: 256.0,
            noise_class: NoiseClass::White,
            codec_class: CodecClass::Uncompressed,
            overlap: false,
        }
    }

    fn entry(id: &str, speaker: &str, sources: &[&str]) -> ManifestEntry {
        ManifestEntry {
            schema_version: MANIFEST_VERSION,
            utterance_id: id.into(),
            wav_path: format!("1/{id}.wav"),
            speaker_id: speaker.into(),
            group_id: 1,
            clean_path: String::new(),
            recipe: RecipeSummary {
                reverb: true,
                room: None,
                geometry: None,
                rir_samples: 0,
                max_image_order: 0,
                noise_class: NoiseClass::White,
                noise_source: "builtin:white".into(),
                snr_db: 10.0,
                achieved_snr_db: 10.0,
                overlap: false,
                sir_db: None,
                interferer_id: None,
                interferer_geometry: None,
                codec: CodecSpec::uncompressed(),
                peak_dbfs: -3.0,
                speech_sources: sources.iter().map(|s| s.to_string()).collect(),
            },
            chunk_labels: vec![(0, label()), (1, label())],
        }
    }

    #[test]
    fn split_is_speaker_disjoint() {
        let mut entries = Vec::new();
        for s in 0..10 {
            for u in 0..3 {
                let spk = format!("s{s}");
                let other = format!("s{}", (s + 1) % 10);
                let sources: Vec<&str> = if u == 2 {
                    vec![&spk, &other]
                } else {
                    vec![&spk]
                };
                entries.push(entry(&format!("{spk}_{u}"), &spk, &sources));
            }
        }
        let split = split_by_speaker(&entries, 0.3, 5);
        assert_eq!(split.test_speakers.len(), 3);
        let spk = |v: &[ManifestEntry]| -> BTreeSet<String> {
            v.iter()
                .flat_map(|e| e.recipe.speech_sources.iter().cloned())
                .collect()
        };
        assert!(spk(&split.train).is_disjoint(&spk(&split.test)));
        assert_eq!(split.train.len() + split.test.len() + split.dropped, 30);
    }

    #[test]
    fn join_and_mean() {
        let mut entries = vec![entry("u1", "a", &["a"])];
        let n = join_labels(
            &mut entries,
            "utterance_id,chunk_index,pesq,estoi\nu1,1,3.5,0.8\nu1,,,0.5\n",
        )
        .unwrap();
        assert_eq!(n, 3);
        assert_eq!(entries[0].chunk_labels[0].1.pesq, None);
        assert_eq!(entries[0].chunk_labels[1].1.pesq, Some(3.5));
        assert_eq!(entries[0].chunk_labels[1].1.estoi, Some(0.5));
        assert!(join_labels(&mut entries, "u1,0,9.0,\n").is_err());
        let labels: Vec<ChunkLabel> = entries[0].chunk_labels.iter().map(|(_, l)| *l).collect();
        let m = utterance_mean(&labels).unwrap();
        assert_eq!(m.pesq, Some(3.5));
        assert_eq!(m.c50_db, 10.0);
    }

    #[test]
    fn manifest_rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &[entry("u", "a", &["a"])]).unwrap();
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\"schema_version\":1", "\"schema_version\":9");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(
            read_manifest(&p),
            Err(SynthError::Manifest { line: 1, .. })
        ));
    }
}
