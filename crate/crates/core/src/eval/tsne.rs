//! Exact t-SNE and the silhouette score.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::rng::SeededRng;

pub const MAX_POINTS: usize = 5000;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsneInit {
    Pca,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub init: TsneInit,
    /// `None` picks `max(N / 48, 50)`.
    pub learning_rate: Option<f64>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
            init: TsneInit::Pca,
            learning_rate: None,
        }
    }
}

fn pairwise_sq(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .par_iter()
        .map(|a| {
            points
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
                .collect()
        })
        .collect()
}

/// Row `i` of the conditional affinities, with the precision found by
/// bisection so that the entropy equals `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut row = vec![0.0; d.len()];
    for _ in 0..200 {
        let dmin = d
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            *r = if j == i {
                0.0
            } else {
                (-(d[j] - dmin) * beta).exp()
            };
            sum += *r;
        }
        let mut h = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            *r /= sum;
            if j != i && *r > 0.0 {
                h -= *r * r.ln();
            }
        }
        let diff = h - target;
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() {
                (beta + hi) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    row
}

fn pca_init(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, dim, |i, k| points[i][k] - mean[k]);
    let cov = x.transpose() * &x;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut comps = Vec::new();
    for &c in order.iter().take(2) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        // Fix the sign for reproducibility.
        let (imax, _) =
            v.iter().enumerate().fold(
                (0, 0.0),
                |b, (i, x)| if x.abs() > b.1 { (i, x.abs()) } else { b },
            );
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        comps.push(v);
    }
    while comps.len() < 2 {
        comps.push(vec![0.0; dim]);
    }
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let row = x.row(i);
            [
                row.iter().zip(&comps[0]).map(|(a, b)| a * b).sum(),
                row.iter().zip(&comps[1]).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();
    let s0 = (y.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64).sqrt();
    if s0 > 0.0 {
        for p in y.iter_mut() {
            p[0] *= 1e-4 / s0;
            p[1] *= 1e-4 / s0;
        }
    }
    y
}

/// Two-dimensional embedding of `points`.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if n > MAX_POINTS {
        return Err(EvalError::TooManyPoints(n));
    }
    if !(cfg.perplexity > 0.0) || (n as f64) < 3.0 * cfg.perplexity {
        return Err(EvalError::PerplexityTooLarge {
            perplexity: cfg.perplexity,
            points: n,
        });
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(EvalError::DegenerateData(
            "zero variance: all points identical".into(),
        ));
    }
    let d = pairwise_sq(points);
    let cond: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| conditional_row(&d[i], i, cfg.perplexity))
        .collect();
    let p: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12))
                .collect()
        })
        .collect();

    let mut y = match cfg.init {
        TsneInit::Pca => pca_init(points),
        TsneInit::Random => {
            let mut rng = SeededRng::for_label(cfg.seed, "tsne/init");
            (0..n)
                .map(|_| [1e-4 * rng.normal(), 1e-4 * rng.normal()])
                .collect()
        }
    };
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / EXAGGERATION / 4.0).max(50.0));
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for it in 0..cfg.iterations {
        let exag = if it < EXAGGERATION_ITERS {
            EXAGGERATION
        } else {
            1.0
        };
        let momentum = if it < EXAGGERATION_ITERS { 0.5 } else { 0.8 };
        let num: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            let dx = y[i][0] - y[j][0];
                            let dy = y[i][1] - y[j][1];
                            1.0 / (1.0 + dx * dx + dy * dy)
                        }
                    })
                    .collect()
            })
            .collect();
        let z: f64 = num.iter().map(|r| r.iter().sum::<f64>()).sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (exag * p[i][j] - num[i][j] / z) * num[i][j];
                    g[0] += 4.0 * w * (y[i][0] - y[j][0]);
                    g[1] += 4.0 * w * (y[i][1] - y[j][1]);
                }
                g
            })
            .collect();
        for i in 0..n {
            for k in 0..2 {
                gains[i][k] = if (grad[i][k] > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                update[i][k] = momentum * update[i][k] - lr * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        for k in 0..2 {
            let mean = y.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|p| p[k] -= mean);
        }
    }
    Ok(y)
}

/// Mean silhouette coefficient; singleton clusters contribute 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sum = vec![0.0; k];
            let mut count = vec![0usize; k];
            for j in 0..n {
                if i != j {
                    sum[labels[j]] += dist(&points[i], &points[j]);
                    count[labels[j]] += 1;
                }
            }
            let own = labels[i];
            if count[own] == 0 {
                return 0.0;
            }
            let a = sum[own] / count[own] as f64;
            let b = (0..k)
                .filter(|&c| c != own && count[c] > 0)
                .map(|c| sum[c] / count[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            (b - a) / a.max(b)
        })
        .collect();
    scores.iter().sum::<f64>() / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = SeededRng::new(seed, 0);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..n {
                pts.push(
                    (0..5)
                        .map(|k| if k == 0 { c as f64 * sep } else { 0.0 } + 0.1 * rng.normal())
                        .collect(),
                );
                labels.push(c);
            }
        }
        (pts, labels)
    }

    #[test]
    fn entropy_matches_perplexity() {
        let (pts, _) = blobs(30, 3.0, 1);
        let d = pairwise_sq(&pts);
        let row = conditional_row(&d[4], 4, 10.0);
        let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
        assert!((h - 10f64.ln()).abs() < 1e-6);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silhouette_of_separated_blobs() {
        let (pts, labels) = blobs(20, 10.0, 2);
        assert!(silhouette(&pts, &labels) > 0.9);
    }

    #[test]
    fn errors() {
        let (pts, _) = blobs(10, 1.0, 3);
        let cfg = TsneConfig::default();
        assert!(matches!(
            tsne(&pts, &cfg),
            Err(EvalError::PerplexityTooLarge { .. })
        ));
        let same = vec![vec![1.0; 3]; 100];
        assert!(matches!(
            tsne(&same, &cfg),
            Err(EvalError::DegenerateData(_))
        ));
    }

    #[test]
    fn separated_blobs_stay_separated() {
        let (pts, labels) = blobs(40, 8.0, 4);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iterations: 400,
            ..TsneConfig::default()
        };
        let a = tsne(&pts, &cfg).unwrap();
        let b = tsne(&pts, &cfg).unwrap();
        assert_eq!(a, b);
        let a2: Vec<Vec<f64>> = a.iter().map(|p| p.to_vec()).collect();
        assert!(silhouette(&a2, &labels) > 0.5);
        // Every point's nearest neighbour in the map shares its blob.
        for i in 0..a2.len() {
            let nn = (0..a2.len())
                .filter(|&j| j != i)
                .min_by(|&j, &k| {
                    let dj = (a[i][0] - a[j][0]).powi(2) + (a[i][1] - a[j][1]).powi(2);
                    let dk = (a[i][0] - a[k][0]).powi(2) + (a[i][1] - a[k][1]).powi(2);
                    dj.total_cmp(&dk)
                })
                .unwrap();
            assert_eq!(labels[nn], labels[i]);
        }
    }
}
