//! k-means with k-means++ seeding, cluster-to-label matching and F1.

use rayon::prelude::*;

use super::{EvalError, Result};
use crate::rng::SeededRng;

pub const RESTARTS: usize = 20;
const MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.uniform(0.0, total);
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.below(points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().expect("non-empty")));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let dim = points[0].len();
    let k = centroids.len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = assignment
        .iter()
        .zip(points)
        .map(|(&a, p)| sq_dist(p, &centroids[a]))
        .sum();
    KMeans {
        assignment,
        centroids,
        inertia,
    }
}

/// Best of `restarts` k-means runs by inertia. Each restart has its own
/// random stream, so the result does not depend on scheduling.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(EvalError::InvalidK {
            k,
            points: points.len(),
        });
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(EvalError::DegenerateData("all points are identical".into()));
    }
    let runs: Vec<KMeans> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = SeededRng::for_label(seed, &format!("kmeans/{r}"));
            lloyd(points, seed_plus_plus(points, k, &mut rng))
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, run| {
            if run.inertia < best.inertia {
                run
            } else {
                best
            }
        })
        .expect("at least one run"))
}

/// Minimum-cost perfect matching on a square matrix; returns the column
/// assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials formulation, 1-based with a virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            rows[p[j] - 1] = j - 1;
        }
    }
    rows
}

/// Greedy matching: repeatedly take the largest remaining entry.
pub fn greedy_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let mut cells: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (score[i][j], i, j))
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut rows = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    for (_, i, j) in cells {
        if rows[i] == usize::MAX && !col_used[j] {
            rows[i] = j;
            col_used[j] = true;
        }
    }
    rows
}

/// `f1[c][l]`: F1 of cluster `c` taken as a prediction of label `l`.
pub fn f1_matrix(clusters: &[usize], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut inter = vec![vec![0usize; k]; k];
    let mut csize = vec![0usize; k];
    let mut lsize = vec![0usize; k];
    for (&c, &l) in clusters.iter().zip(labels) {
        inter[c][l] += 1;
        csize[c] += 1;
        lsize[l] += 1;
    }
    (0..k)
        .map(|c| {
            (0..k)
                .map(|l| {
                    let d = csize[c] + lsize[l];
                    if d == 0 {
                        0.0
                    } else {
                        2.0 * inter[c][l] as f64 / d as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Macro-F1 of class predictions over the classes that occur in either
/// the truth or the predictions.
pub fn macro_f1(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}
