//! Exact t-SNE for small embedding sets, and the silhouette score used to
//! measure how well embeddings cluster by label.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    /// Iterations run with exaggerated affinities.
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig { perplexity: 5.0, iterations: 1000, exaggeration: 12.0, exaggeration_iters: 250, learning_rate: 200.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL(P‖Q) after each iteration, against the unexaggerated affinities.
    pub kl: Vec<f64>,
}

fn sq_dists(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| x.iter().map(|b| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()).collect())
        .collect()
}

/// Conditional row `p_{j|i}` whose perplexity matches `perplexity`, found by
/// bisection on the Gaussian precision.
fn calibrated_row(d: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
    let mut row = vec![0.0; d.len()];
    for _ in 0..200 {
        let min = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for (j, &v) in d.iter().enumerate() {
            row[j] = if j == i { 0.0 } else { (-(v - min) * beta).exp() };
            sum += row[j];
        }
        let mut h = 0.0;
        for (j, p) in row.iter_mut().enumerate() {
            *p /= sum;
            if j != i && *p > 0.0 {
                h -= *p * p.ln();
            }
        }
        let diff = h - target;
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    row
}

/// Symmetrized joint affinities.
pub fn joint_affinities(x: &[Vec<f64>], perplexity: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = sq_dists(x);
    let cond: Vec<Vec<f64>> = (0..n).map(|i| calibrated_row(&d[i], i, perplexity)).collect();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12) }).collect())
        .collect()
}

pub fn tsne(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    if !(cfg.perplexity > 0.0) || (n as f64) < cfg.perplexity + 1.0 {
        return Err(Error::Config(format!("t-SNE with perplexity {} needs more than {} points, got {n}", cfg.perplexity, cfg.perplexity)));
    }
    if x.iter().any(|r| r.len() != x[0].len() || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Config("t-SNE input rows must be finite and equally long".into()));
    }
    let p = joint_affinities(x, cfg.perplexity);
    let mut r = rng::stream(cfg.seed, &[rng::tag::TSNE]);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut r), normal.sample(&mut r)]).collect();
    let mut step = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut kl = Vec::with_capacity(cfg.iterations);
    let mut num = vec![vec![0.0; n]; n];
    for it in 0..cfg.iterations {
        let ex = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                num[i][j] = if i == j {
                    0.0
                } else {
                    let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                    1.0 / (1.0 + dx * dx + dy * dy)
                };
                z += num[i][j];
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                let w = (ex * p[i][j] - num[i][j] / z) * num[i][j];
                grad[0] += 4.0 * w * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                gains[i][c] = if (grad[c] > 0.0) != (step[i][c] > 0.0) { gains[i][c] + 0.2 } else { gains[i][c] * 0.8 };
                gains[i][c] = f64::max(gains[i][c], 0.01);
                step[i][c] = momentum * step[i][c] - cfg.learning_rate * gains[i][c] * grad[c];
            }
        }
        for i in 0..n {
            y[i][0] += step[i][0];
            y[i][1] += step[i][1];
        }
        let mean = y.iter().fold([0.0; 2], |m, v| [m[0] + v[0] / n as f64, m[1] + v[1] / n as f64]);
        y.iter_mut().for_each(|v| *v = [v[0] - mean[0], v[1] - mean[1]]);
        kl.push(divergence(&p, &y));
    }
    Ok(TsneResult { coords: y, kl })
}

fn divergence(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                q[i][j] = 1.0 / (1.0 + dx * dx + dy * dy);
                z += q[i][j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kl += p[i][j] * (p[i][j] / (q[i][j] / z).max(1e-300)).ln();
            }
        }
    }
    kl
}

/// Mean Euclidean silhouette. A point alone in its cluster scores 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::Config("silhouette needs one label per point".into()));
    }
    let mut groups: Vec<usize> = labels.to_vec();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        return Err(Error::Config("silhouette needs at least two clusters".into()));
    }
    let d: Vec<Vec<f64>> = sq_dists(points).into_iter().map(|r| r.into_iter().map(f64::sqrt).collect()).collect();
    let mut total = 0.0;
    for i in 0..points.len() {
        let mean_to = |g: usize| {
            let (s, c) = (0..points.len())
                .filter(|&j| j != i && labels[j] == g)
                .fold((0.0, 0usize), |(s, c), j| (s + d[i][j], c + 1));
            (c > 0).then(|| s / c as f64)
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = groups.iter().filter(|&&g| g != labels[i]).filter_map(|&g| mean_to(g)).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}
