//! Exact t-SNE.
//!
//! Input affinities use a Gaussian kernel per point whose precision is found
//! by bisection so that each conditional distribution has entropy
//! `ln(perplexity)`; the joint `P` is the symmetrized average. The embedding
//! follows the usual schedule (early exaggeration, momentum switch,
//! per-coordinate gains). Once exaggeration is over, a step that would raise
//! the KL divergence is halved until it does not, and dropped if halving
//! fails, so the reported objective never increases in the final phase.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Allowed `|H − ln(perplexity)|` for each point's bandwidth.
    pub entropy_tolerance: f64,
    pub max_bisection_steps: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            entropy_tolerance: 1e-5,
            max_bisection_steps: 200,
            seed: 0,
        }
    }
}

/// Symmetric joint input affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n×n`, zero diagonal, sums to 1.
    pub p: Vec<f64>,
    /// Kernel precision `β_i = 1/(2σ_i²)` per point.
    pub betas: Vec<f64>,
    /// `|H_i − ln(perplexity)|` achieved per point.
    pub entropy_errors: Vec<f64>,
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
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

/// Conditional row `p_{·|i}` at precision `beta`, with its entropy (nats).
/// Distances are shifted by their minimum, which leaves both unchanged but
/// keeps the exponentials in range.
fn conditional(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let dmin = dist.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    let mut mean_d = 0.0;
    for (j, (&d, p)) in dist.iter().zip(row.iter_mut()).enumerate() {
        if j == i {
            *p = 0.0;
            continue;
        }
        let e = (-beta * (d - dmin)).exp();
        *p = e;
        z += e;
        mean_d += e * (d - dmin);
    }
    for p in row.iter_mut() {
        *p /= z;
    }
    z.ln() + beta * mean_d / z
}

/// Per-point bandwidths by bisection and the symmetrized joint `P`.
pub fn affinities(features: &[Vec<f64>], config: &TsneConfig) -> Result<Affinities> {
    let n = features.len();
    if !(config.perplexity >= 1.0) {
        return Err(param(format!("perplexity {} must be at least 1", config.perplexity)));
    }
    if (n as f64) <= 3.0 * config.perplexity {
        return Err(param(format!("{n} points are too few for perplexity {} (need more than 3×)", config.perplexity)));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(param("feature rows differ in length"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(param("features contain non-finite values"));
    }
    let dist = squared_distances(features);
    let target = config.perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut betas = vec![0.0; n];
    let mut errors = vec![0.0; n];
    for i in 0..n {
        let di = &dist[i * n..(i + 1) * n];
        let row = &mut cond[i * n..(i + 1) * n];
        let mean = di.iter().sum::<f64>() / (n - 1) as f64;
        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut converged = false;
        for _ in 0..config.max_bisection_steps {
            let h = conditional(di, i, beta, row);
            let err = h - target;
            errors[i] = err.abs();
            if err.abs() <= config.entropy_tolerance {
                converged = true;
                break;
            }
            // Entropy falls as precision rises.
            if err > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        if !converged {
            return Err(Error::Numeric(format!(
                "bandwidth search for point {i} missed the entropy target by {:.3e} after {} steps",
                errors[i], config.max_bisection_steps
            )));
        }
        betas[i] = beta;
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(Affinities { n, p, betas, entropy_errors: errors })
}

/// Student-t kernel values `(1 + |y_i − y_j|²)⁻¹` and their off-diagonal sum.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

const FLOOR: f64 = 1e-12;

fn kl_divergence(p: &[f64], num: &[f64], sum: f64) -> f64 {
    let n = (p.len() as f64).sqrt() as usize;
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (num[i * n + j] / sum).max(FLOOR);
                kl += pij * (pij.max(FLOOR) / q).ln();
            }
        }
    }
    kl
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y {
        p[0] -= mx;
        p[1] -= my;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL divergence of the final embedding.
    pub kl: f64,
    /// KL divergence after every iteration.
    pub kl_history: Vec<f64>,
    pub max_entropy_error: f64,
    /// Iterations whose step had to be shortened or dropped.
    pub backtracked: usize,
}

/// Embeds `features` (one row per point) into two dimensions.
pub fn tsne_embed(features: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    if !(config.learning_rate > 0.0) || !(config.exaggeration >= 1.0) {
        return Err(param("learning rate must be positive and exaggeration at least 1"));
    }
    let aff = affinities(features, config)?;
    let n = aff.n;
    let p = &aff.p;
    let mut r = rng::stream(config.seed, "tsne-init", &[]);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut r), normal.sample(&mut r)]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let (mut num, mut zsum) = kernel(&y);
    let mut kl = kl_divergence(p, &num, zsum);
    let mut history = Vec::with_capacity(config.iterations);
    let mut backtracked = 0;
    let mut grad = vec![[0.0; 2]; n];
    for t in 0..config.iterations {
        let exaggerating = t < config.exaggeration_iterations;
        let exag = if exaggerating { config.exaggeration } else { 1.0 };
        let momentum = if exaggerating { config.initial_momentum } else { config.final_momentum };
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exag * p[i * n + j] - w / zsum) * w;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (vel[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                vel[i][d] = momentum * vel[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
            }
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand: Vec<[f64; 2]> = y.iter().zip(&vel).map(|(a, v)| [a[0] + scale * v[0], a[1] + scale * v[1]]).collect();
            center(&mut cand);
            let (cn, cz) = kernel(&cand);
            let ck = kl_divergence(p, &cn, cz);
            if exaggerating || ck <= kl {
                accepted = Some((cand, cn, cz, ck));
                break;
            }
            scale *= 0.5;
        }
        if scale < 1.0 {
            backtracked += 1;
        }
        match accepted {
            Some((cand, cn, cz, ck)) => {
                if scale < 1.0 {
                    for v in vel.iter_mut() {
                        v[0] *= scale;
                        v[1] *= scale;
                    }
                }
                y = cand;
                num = cn;
                zsum = cz;
                kl = ck;
            }
            None => vel.iter_mut().for_each(|v| *v = [0.0; 2]),
        }
        if !kl.is_finite() || y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("t-SNE became non-finite at iteration {t}")));
        }
        history.push(kl);
    }
    Ok(TsneResult {
        coords: y,
        kl,
        kl_history: history,
        max_entropy_error: aff.entropy_errors.iter().copied().fold(0.0, f64::max),
        backtracked,
    })
}
