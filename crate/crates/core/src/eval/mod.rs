//! Embedding-level analysis: utterance embeddings and their dump format,
//! k-means F1, cosine distances between speakers and t-SNE projections.

pub mod cluster;
pub mod tsne;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{f1_matrix, greedy_assignment, hungarian, kmeans, macro_f1, KMeans, RESTARTS};
pub use tsne::{silhouette, tsne, TsneConfig, TsneInit};

use crate::features;
use crate::model::ModelParams;
use crate::synth::{self, ManifestEntry};

pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("k = {k} is invalid for {points} points")]
    InvalidK { k: usize, points: usize },
    #[error("k = {k} but {field} has {labels} distinct values")]
    KMismatch { field: String, k: usize, labels: usize },
    #[error("clustering by {field} needs more than one label value, found {found}")]
    SingleLabel { field: String, found: usize },
    #[error("perplexity {perplexity} needs at least {} points, got {points}", (3.0 * perplexity).ceil())]
    PerplexityTooLarge { perplexity: f64, points: usize },
    #[error("exact t-SNE supports at most {max} points, got {0}", max = tsne::MAX_POINTS)]
    TooManyPoints(usize),
    #[error("zero vector for {0}")]
    ZeroVector(String),
    #[error("need at least two speakers, found {0}")]
    TooFewSpeakers(usize),
    #[error("reference speaker {0} not found")]
    UnknownSpeaker(String),
    #[error("utterance {id} is shorter than one chunk")]
    UtteranceTooShort { id: String },
    #[error("embedding dump line {line}: {msg}")]
    Dump { line: usize, msg: String },
    #[error("filter: {0}")]
    Filter(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One utterance embedding with the conditions it was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    #[serde(skip)]
    pub vector: Vec<f64>,
    pub utterance_id: String,
    pub speaker_id: String,
    pub noise_class: String,
    pub reverb_present: bool,
    pub overlap: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codec_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorEncoding {
    Decimal,
    Base64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub schema_version: u32,
    pub dim: usize,
    pub count: usize,
    /// Which system produced the vectors.
    pub source: String,
    pub encoding: VectorEncoding,
}

#[derive(Serialize, Deserialize)]
struct DumpLine {
    #[serde(flatten)]
    record: EmbeddingRecord,
    vector: serde_json::Value,
}

/// Header line, then one JSON object per record. Vectors are stored as
/// f32, either as decimal arrays or base64 of little-endian bytes.
pub fn write_dump(
    path: &Path,
    records: &[EmbeddingRecord],
    source: &str,
    encoding: VectorEncoding,
) -> Result<()> {
    let dim = records.first().map(|r| r.vector.len()).unwrap_or(0);
    if records.iter().any(|r| r.vector.len() != dim) {
        return Err(EvalError::Dump {
            line: 0,
            msg: "records of mixed dimension".into(),
        });
    }
    let header = DumpHeader {
        schema_version: DUMP_VERSION,
        dim,
        count: records.len(),
        source: source.to_string(),
        encoding,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header).expect("serializable");
    w.write_all(b"\n")?;
    for r in records {
        let vector = match encoding {
            VectorEncoding::Decimal => serde_json::Value::Array(
                r.vector
                    .iter()
                    .map(|v| {
                        let f = *v as f32;
                        // Shortest f32 text parses back to the same f32.
                        serde_json::Value::Number(
                            serde_json::Number::from_f64(
                                f.to_string().parse::<f64>().expect("float"),
                            )
                            .expect("finite"),
                        )
                    })
                    .collect(),
            ),
            VectorEncoding::Base64 => {
                let bytes: Vec<u8> = r
                    .vector
                    .iter()
                    .flat_map(|v| (*v as f32).to_le_bytes())
                    .collect();
                serde_json::Value::String(base64::engine::general_purpose::STANDARD.encode(bytes))
            }
        };
        serde_json::to_writer(
            &mut w,
            &DumpLine {
                record: r.clone(),
                vector,
            },
        )
        .expect("serializable");
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<(DumpHeader, Vec<EmbeddingRecord>)> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let bad = |line: usize, msg: String| EvalError::Dump { line, msg };
    let first = lines.next().ok_or_else(|| bad(1, "empty file".into()))??;
    let header: DumpHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    if header.schema_version != DUMP_VERSION {
        return Err(bad(
            1,
            format!(
                "schema_version {}, this build reads {DUMP_VERSION}",
                header.schema_version
            ),
        ));
    }
    let mut records = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DumpLine = serde_json::from_str(&line).map_err(|e| bad(no, e.to_string()))?;
        let vector: Vec<f64> = match (&header.encoding, parsed.vector) {
            (VectorEncoding::Decimal, serde_json::Value::Array(a)) => a
                .iter()
                .map(|v| {
                    v.as_f64()
                        .map(|x| x as f32 as f64)
                        .ok_or_else(|| bad(no, "non-numeric vector entry".into()))
                })
                .collect::<Result<_>>()?,
            (VectorEncoding::Base64, serde_json::Value::String(s)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(s)
                    .map_err(|e| bad(no, e.to_string()))?;
                if bytes.len() % 4 != 0 {
                    return Err(bad(no, "base64 payload not a multiple of 4 bytes".into()));
                }
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect()
            }
            _ => {
                return Err(bad(
                    no,
                    "vector does not match the declared encoding".into(),
                ))
            }
        };
        if vector.len() != header.dim {
            return Err(bad(
                no,
                format!("dimension {} != {}", vector.len(), header.dim),
            ));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(bad(no, "non-finite value".into()));
        }
        records.push(EmbeddingRecord {
            vector,
            ..parsed.record
        });
    }
    if records.len() != header.count {
        return Err(bad(
            0,
            format!(
                "header count {} but {} records",
                header.count,
                records.len()
            ),
        ));
    }
    Ok((header, records))
}

/// Mean of the chunk embeddings of every utterance, in manifest order.
pub fn embed_corpus(
    params: &ModelParams,
    entries: &[ManifestEntry],
    manifest_dir: &Path,
) -> Result<Vec<EmbeddingRecord>> {
    entries
        .par_iter()
        .map(|e| {
            let audio = synth::load_entry_audio(e, manifest_dir)?;
            let chunks = match features::extract_chunks(&audio, &e.utterance_id) {
                Ok(c) => c,
                Err(features::FeatureError::TooShort { .. }) => {
                    return Err(EvalError::UtteranceTooShort {
                        id: e.utterance_id.clone(),
                    })
                }
                Err(err) => return Err(err.into()),
            };
            let mut sum = vec![0.0; params.config.embed_dim];
            for c in &chunks {
                let out = params.forward(c)?;
                for (s, v) in sum.iter_mut().zip(out.embedding.iter()) {
                    *s += v;
                }
            }
            let n = chunks.len() as f64;
            let labels: Vec<_> = e.chunk_labels.iter().map(|(_, l)| *l).collect();
            let mean = synth::utterance_mean(&labels);
            Ok(EmbeddingRecord {
                vector: sum.into_iter().map(|s| s / n).collect(),
                utterance_id: e.utterance_id.clone(),
                speaker_id: e.speaker_id.clone(),
                noise_class: e.recipe.noise_class.name().to_string(),
                reverb_present: e.recipe.reverb,
                overlap: e.recipe.overlap,
                snr_db: mean.and_then(|m| m.snr_db),
                codec_class: Some(e.recipe.codec.codec_class.name().to_string()),
                group_id: Some(e.group_id),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelField {
    Noise,
    Reverb,
    Overlap,
}

impl LabelField {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "noise" => Some(LabelField::Noise),
            "reverb" => Some(LabelField::Reverb),
            "overlap" => Some(LabelField::Overlap),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelField::Noise => "noise",
            LabelField::Reverb => "reverb",
            LabelField::Overlap => "overlap",
        }
    }

    pub fn value(self, r: &EmbeddingRecord) -> String {
        match self {
            LabelField::Noise => r.noise_class.clone(),
            LabelField::Reverb => r.reverb_present.to_string(),
            LabelField::Overlap => r.overlap.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub task: String,
    pub k: usize,
    pub f1: f64,
    /// Label matched to each cluster.
    pub assignment: Vec<String>,
    /// Per label, in sorted label order.
    pub per_class_f1: Vec<(String, f64)>,
    pub points: usize,
}

/// Sorted distinct values of `field`.
pub fn distinct_labels(records: &[EmbeddingRecord], field: LabelField) -> Vec<String> {
    records
        .iter()
        .map(|r| field.value(r))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// k-means on the vectors, clusters matched to labels by maximum summed F1.
/// `k` must equal the number of distinct label values.
pub fn kmeans_f1(
    records: &[EmbeddingRecord],
    field: LabelField,
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    let labels = distinct_labels(records, field);
    if labels.len() < 2 {
        return Err(EvalError::SingleLabel {
            field: field.name().into(),
            found: labels.len(),
        });
    }
    if k != labels.len() {
        return Err(EvalError::KMismatch {
            field: field.name().into(),
            k,
            labels: labels.len(),
        });
    }
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let truth: Vec<usize> = records
        .iter()
        .map(|r| index[field.value(r).as_str()])
        .collect();
    let points: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    let km = kmeans(&points, k, RESTARTS, seed)?;
    let f1 = f1_matrix(&km.assignment, &truth, k);
    let cost: Vec<Vec<f64>> = f1.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    let matched = hungarian(&cost);
    let mut per_class = vec![0.0; k];
    for (c, &l) in matched.iter().enumerate() {
        per_class[l] = f1[c][l];
    }
    Ok(ClusterReport {
        task: field.name().into(),
        k,
        f1: per_class.iter().sum::<f64>() / k as f64,
        assignment: matched.iter().map(|&l| labels[l].clone()).collect(),
        per_class_f1: labels.iter().cloned().zip(per_class).collect(),
        points: records.len(),
    })
}

pub fn cluster_report_csv(r: &ClusterReport) -> String {
    let mut s = String::from("task,k,points,macro_f1,label,label_f1,cluster\n");
    for (label, f) in &r.per_class_f1 {
        let cluster = r
            .assignment
            .iter()
            .position(|a| a == label)
            .expect("matched");
        s.push_str(&format!(
            "{},{},{},{},{label},{f},{cluster}\n",
            r.task, r.k, r.points, r.f1
        ));
    }
    s
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Option<f64> {
    let su = u.iter().map(|x| x * x).sum::<f64>();
    let sv = v.iter().map(|x| x * x).sum::<f64>();
    if su == 0.0 || sv == 0.0 {
        return None;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    // sqrt(s * s) == s exactly, so identical vectors give exactly 0.
    let prod = su * sv;
    let norm = if prod.is_normal() {
        prod.sqrt()
    } else {
        su.sqrt() * sv.sqrt()
    };
    Some((1.0 - dot / norm).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineReport {
    pub reference_speaker: String,
    pub mean: f64,
    pub std: f64,
    pub distances: Vec<(String, f64)>,
}

/// Distance from the reference speaker's record to one record of every
/// other speaker (the first in input order).
pub fn cosine_distance_report(
    records: &[EmbeddingRecord],
    reference_speaker: &str,
) -> Result<CosineReport> {
    let mut first: BTreeMap<&str, &EmbeddingRecord> = BTreeMap::new();
    for r in records {
        first.entry(r.speaker_id.as_str()).or_insert(r);
    }
    if first.len() < 2 {
        return Err(EvalError::TooFewSpeakers(first.len()));
    }
    let reference = first
        .get(reference_speaker)
        .ok_or_else(|| EvalError::UnknownSpeaker(reference_speaker.into()))?;
    let mut distances = Vec::new();
    for (spk, r) in &first {
        if *spk == reference_speaker {
            continue;
        }
        let d = cosine_distance(&reference.vector, &r.vector)
            .ok_or_else(|| EvalError::ZeroVector(r.utterance_id.clone()))?;
        distances.push((spk.to_string(), d));
    }
    if reference.vector.iter().all(|v| *v == 0.0) {
        return Err(EvalError::ZeroVector(reference.utterance_id.clone()));
    }
    let n = distances.len() as f64;
    let mean = distances.iter().map(|(_, d)| d).sum::<f64>() / n;
    let std = (distances
        .iter()
        .map(|(_, d)| (d - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(CosineReport {
        reference_speaker: reference_speaker.into(),
        mean,
        std,
        distances,
    })
}

pub fn projection_csv(records: &[EmbeddingRecord], coords: &[[f64; 2]]) -> String {
    let mut s = String::from("x,y,utterance_id,speaker_id,noise_class,reverb_present,overlap\n");
    for (r, c) in records.iter().zip(coords) {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c[0], c[1], r.utterance_id, r.speaker_id, r.noise_class, r.reverb_present, r.overlap
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
struct Clause {
    field: String,
    op: Op,
    value: String,
}

/// Conjunction of `field op value` clauses separated by commas, e.g.
/// `snr>20,codec==uncompressed,overlap==false`. Fields: `noise`,
/// `reverb`, `overlap`, `snr`, `codec`, `group`, `speaker`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Filter {
    clauses: Vec<Clause>,
}

const FIELDS: [&str; 7] = [
    "noise", "reverb", "overlap", "snr", "codec", "group", "speaker",
];

impl Filter {
    pub fn parse(expr: &str) -> Result<Self> {
        let mut clauses = Vec::new();
        for part in expr.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let ops = [
                ("==", Op::Eq),
                ("!=", Op::Ne),
                ("<=", Op::Le),
                (">=", Op::Ge),
                ("<", Op::Lt),
                (">", Op::Gt),
                ("=", Op::Eq),
            ];
            let (pos, text, op) = ops
                .iter()
                .filter_map(|(t, o)| part.find(t).map(|p| (p, *t, *o)))
                .min_by_key(|(p, t, _)| (*p, std::cmp::Reverse(t.len())))
                .ok_or_else(|| EvalError::Filter(format!("no operator in {part:?}")))?;
            let field = part[..pos].trim().to_string();
            let value = part[pos + text.len()..].trim().to_string();
            if !FIELDS.contains(&field.as_str()) {
                return Err(EvalError::Filter(format!(
                    "unknown field {field:?}; known: {FIELDS:?}"
                )));
            }
            if value.is_empty() {
                return Err(EvalError::Filter(format!("missing value in {part:?}")));
            }
            let numeric = matches!(field.as_str(), "snr" | "group");
            if numeric && value.parse::<f64>().is_err() {
                return Err(EvalError::Filter(format!(
                    "{field} needs a number, got {value:?}"
                )));
            }
            if !numeric && !matches!(op, Op::Eq | Op::Ne) {
                return Err(EvalError::Filter(format!(
                    "{field} supports only == and !="
                )));
            }
            clauses.push(Clause { field, op, value });
        }
        Ok(Self { clauses })
    }

    pub fn matches(&self, r: &EmbeddingRecord) -> bool {
        self.clauses.iter().all(|c| {
            let num = match c.field.as_str() {
                "snr" => Some(r.snr_db),
                "group" => Some(r.group_id.map(f64::from)),
                _ => None,
            };
            if let Some(v) = num {
                let Some(v) = v else { return false };
                let t: f64 = c.value.parse().expect("validated");
                return match c.op {
                    Op::Eq => v == t,
                    Op::Ne => v != t,
                    Op::Lt => v < t,
                    Op::Le => v <= t,
                    Op::Gt => v > t,
                    Op::Ge => v >= t,
                };
            }
            let s = match c.field.as_str() {
                "noise" => Some(r.noise_class.clone()),
                "reverb" => Some(r.reverb_present.to_string()),
                "overlap" => Some(r.overlap.to_string()),
                "codec" => r.codec_class.clone(),
                "speaker" => Some(r.speaker_id.clone()),
                _ => unreachable!("validated"),
            };
            match (s, c.op) {
                (Some(s), Op::Eq) => s == c.value,
                (Some(s), Op::Ne) => s != c.value,
                (None, Op::Ne) => true,
                _ => false,
            }
        })
    }

    pub fn apply(&self, records: &[EmbeddingRecord]) -> Vec<EmbeddingRecord> {
        records
            .iter()
            .filter(|r| self.matches(r))
            .cloned()
            .collect()
    }
}
