//! Multi-task objective: squared error on normalized regression targets and
//! cross-entropy on class logits, averaged with unit weights over the tasks
//! that are active for a chunk.

use ndarray::Array1;

use super::config::HeadSpec;
use super::net::OutputGrad;
use super::{ModelError, ModelOutput, Result};

/// Targets for one chunk. Regression values are in normalized space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Targets {
    pub regression: [Option<f64>; 11],
    pub classes: [Option<usize>; 3],
}

/// `true` keeps a task in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskMask {
    pub regression: [bool; 11],
    pub classification: [bool; 3],
}

impl Default for TaskMask {
    fn default() -> Self {
        Self {
            regression: [true; 11],
            classification: [true; 3],
        }
    }
}

impl TaskMask {
    pub fn none() -> Self {
        Self {
            regression: [false; 11],
            classification: [false; 3],
        }
    }
}

/// Total and per-task components; `None` where a task did not contribute.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub regression: [Option<f64>; 11],
    pub classification: [Option<f64>; 3],
}

impl LossBreakdown {
    pub fn active_tasks(&self) -> usize {
        self.regression.iter().flatten().count() + self.classification.iter().flatten().count()
    }
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

pub fn loss(
    out: &ModelOutput,
    targets: &Targets,
    mask: &TaskMask,
    heads: &HeadSpec,
) -> Result<LossBreakdown> {
    loss_with_grad(out, targets, mask, heads).map(|(b, _)| b)
}

pub(crate) fn loss_with_grad(
    out: &ModelOutput,
    targets: &Targets,
    mask: &TaskMask,
    heads: &HeadSpec,
) -> Result<(LossBreakdown, OutputGrad)> {
    let mut b = LossBreakdown::default();
    let mut reg_err = [0.0; 11];
    for i in 0..11 {
        if let (true, true, Some(pred), Some(t)) = (
            heads.regression[i],
            mask.regression[i],
            out.regression[i],
            targets.regression[i],
        ) {
            let e = pred - t;
            reg_err[i] = e;
            b.regression[i] = Some(e * e);
        }
    }
    let mut probs: [Option<(Array1<f64>, usize)>; 3] = [None, None, None];
    for i in 0..3 {
        if let (true, true, Some(logits), Some(c)) = (
            heads.classification[i],
            mask.classification[i],
            out.class_logits[i].as_ref(),
            targets.classes[i],
        ) {
            let ls = log_softmax(logits);
            b.classification[i] = Some(-ls[c]);
            probs[i] = Some((ls.mapv(f64::exp), c));
        }
    }
    let n = b.active_tasks();
    if n == 0 {
        return Err(ModelError::AllTasksMasked);
    }
    let scale = 1.0 / n as f64;
    b.total = (b.regression.iter().flatten().sum::<f64>()
        + b.classification.iter().flatten().sum::<f64>())
        * scale;

    let regression = (0..11)
        .map(|i| {
            if b.regression[i].is_some() {
                2.0 * reg_err[i] * scale
            } else {
                0.0
            }
        })
        .collect();
    let logits = probs
        .into_iter()
        .map(|p| {
            p.map(|(mut p, c)| {
                p[c] -= 1.0;
                p * scale
            })
        })
        .collect();
    Ok((
        b,
        OutputGrad {
            regression,
            logits,
            embedding: None,
        },
    ))
}
