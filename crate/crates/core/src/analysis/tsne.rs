//! Exact O(n²) t-SNE to two dimensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    /// Iterations run with exaggeration and momentum 0.5.
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iters: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

const ENTROPY_TOL: f64 = 1e-5;
const JITTER: f64 = 1e-10;

fn sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional distribution of row `i` at precision `beta` and its entropy
/// in nats.
fn conditional_row(d: &[f64], i: usize, n: usize, beta: f64, out: &mut [f64]) -> f64 {
    let row = &d[i * n..(i + 1) * n];
    let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for j in 0..n {
        out[j] = if j == i { 0.0 } else { (-beta * (row[j] - dmin)).exp() };
        sum += out[j];
    }
    let mut h = 0.0;
    for j in 0..n {
        out[j] /= sum;
        if out[j] > 0.0 {
            h -= out[j] * out[j].ln();
        }
    }
    h
}

/// Binary search on the precision of row `i` until its entropy is within
/// tolerance of `target`; leaves the distribution in `out` and returns the
/// entropy reached.
fn fit_row(d: &[f64], i: usize, n: usize, target: f64, out: &mut [f64]) -> f64 {
    let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
    let mut h = conditional_row(d, i, n, beta, out);
    for _ in 0..200 {
        if (h - target).abs() < ENTROPY_TOL {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        h = conditional_row(d, i, n, beta, out);
    }
    h
}

/// Symmetrised joint affinities `P = (P_{j|i} + P_{i|j}) / 2n`, row-major.
pub fn joint_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(Error::contract(format!("perplexity {perplexity} must lie in (0, {n})")));
    }
    let d = sq_distances(x);
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        fit_row(&d, i, n, target, &mut row);
        cond[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Embeds the rows of `x` in the plane. Deterministic for a fixed config.
pub fn tsne_2d(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    let n = x.len();
    if n < 4 {
        return Err(Error::contract(format!("t-SNE needs at least 4 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x.to_vec();
    let has_duplicates = sq_distances(&x)
        .iter()
        .enumerate()
        .any(|(k, &v)| k / n != k % n && v == 0.0);
    if has_duplicates {
        let noise = Normal::new(0.0, JITTER).expect("valid std");
        for v in x.iter_mut().flatten() {
            *v += noise.sample(&mut rng);
        }
    }
    let p = joint_affinities(&x, cfg.perplexity)?;

    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / cfg.early_exaggeration / 4.0).max(50.0));
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    for it in 0..cfg.iters {
        let early = it < cfg.exaggeration_iters;
        let exag = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let mut zsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                zsum += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (exag * p[i * n + j] - q / zsum) * q;
                g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                g[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            grad[i] = g;
        }
        for i in 0..n {
            for k in 0..2 {
                // delta-bar-delta gains
                gains[i][k] = if (grad[i][k] > 0.0) != (vel[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                vel[i][k] = momentum * vel[i][k] - lr * gains[i][k] * grad[i][k];
                y[i][k] += vel[i][k];
            }
        }
        for k in 0..2 {
            let mean = y.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            for r in &mut y {
                r[k] -= mean;
            }
        }
    }
    Ok(y)
}
