//! Latent and generative reconstruction losses, collapse diagnostics,
//! roundtrip error, and the surrogate-bound report.
//!
//! Both losses are means of per-sample unsquared Euclidean norms, matching
//! their defining expressions; training code elsewhere optimizes the squared
//! variants for smoothness and reports these.

use crate::envs::TransitionTriple;
use crate::error::{Error, Result};
use crate::models::{Belief, DecoderModel, EncoderModel, WorldModelFn};

#[derive(Debug, Clone)]
pub struct LossReport {
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub batch_size: usize,
}

impl LossReport {
    fn from_residual_norms(per_sample: Vec<f64>) -> Self {
        let batch_size = per_sample.len();
        let value = per_sample.iter().sum::<f64>() / batch_size as f64;
        LossReport {
            value,
            per_sample,
            batch_size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollapseReport {
    pub per_dim_std: Vec<f64>,
    pub effective_rank: f64,
    pub mean_pairwise_distance: f64,
}

impl CollapseReport {
    pub fn mean_std(&self) -> f64 {
        self.per_dim_std.iter().sum::<f64>() / self.per_dim_std.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub latent_loss: f64,
    pub gen_loss: f64,
    pub roundtrip_epsilon: f64,
    pub bound_satisfied: bool,
    pub gap: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean over the batch of ||f(h(o), a) - h(o')||.
pub fn latent_loss(
    h: &EncoderModel,
    f: &WorldModelFn,
    batch: &[TransitionTriple],
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut per_sample = Vec::with_capacity(batch.len());
    for t in batch {
        let s = h.encode(&t.obs)?;
        let s_pred = f.predict(&s, &t.action)?;
        let s_target = h.encode(&t.obs_next)?;
        per_sample.push(euclidean(&s_pred, &s_target));
    }
    Ok(LossReport::from_residual_norms(per_sample))
}

/// Mean over the batch of ||g(f(h(o), a)) - o'||.
pub fn generative_loss(
    h: &EncoderModel,
    f: &WorldModelFn,
    g: &DecoderModel,
    batch: &[TransitionTriple],
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut per_sample = Vec::with_capacity(batch.len());
    for t in batch {
        let s = h.encode(&t.obs)?;
        let s_pred = f.predict(&s, &t.action)?;
        let o_pred = g.decode(&s_pred)?;
        per_sample.push(euclidean(&o_pred, &t.obs_next));
    }
    Ok(LossReport::from_residual_norms(per_sample))
}

/// Max over the given beliefs of ||h(g(s)) - s||.
pub fn roundtrip_epsilon(h: &EncoderModel, g: &DecoderModel, beliefs: &[Belief]) -> Result<f64> {
    if beliefs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut worst: f64 = 0.0;
    for s in beliefs {
        let o = g.decode(s)?;
        let back = h.encode(&o)?;
        worst = worst.max(euclidean(&back, s));
    }
    Ok(worst)
}

/// Jacobi eigenvalues of a symmetric matrix (row-major, n x n).
fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-30 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Per-dimension standard deviation, effective rank (exp of the entropy of
/// normalized covariance eigenvalues; 0 for a zero covariance), and mean
/// pairwise distance of the encoded observations.
pub fn collapse_diagnostics(h: &EncoderModel, observations: &[Vec<f64>]) -> Result<CollapseReport> {
    if observations.len() < 2 {
        return Err(Error::InvalidParam(
            "collapse diagnostics need at least 2 observations".into(),
        ));
    }
    let beliefs: Vec<Belief> = observations
        .iter()
        .map(|o| h.encode(o))
        .collect::<Result<_>>()?;
    let n = beliefs.len();
    let d = beliefs[0].len();

    let mut mean = vec![0.0; d];
    for b in &beliefs {
        for (m, v) in mean.iter_mut().zip(b) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut cov = vec![0.0; d * d];
    for b in &beliefs {
        for i in 0..d {
            let ci = b[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += ci * (b[j] - mean[j]);
            }
        }
    }
    for v in cov.iter_mut() {
        *v /= n as f64;
    }

    let per_dim_std: Vec<f64> = (0..d).map(|i| cov[i * d + i].max(0.0).sqrt()).collect();

    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let effective_rank = if trace <= 0.0 {
        0.0
    } else {
        let eig = symmetric_eigenvalues(cov.clone(), d);
        let total: f64 = eig.iter().map(|&l| l.max(0.0)).sum();
        if total <= 0.0 {
            0.0
        } else {
            let mut entropy = 0.0;
            for &l in &eig {
                let p = l.max(0.0) / total;
                if p > 0.0 {
                    entropy -= p * p.ln();
                }
            }
            entropy.exp()
        }
    };

    // Exact mean over distinct pairs for small batches; strided subsample
    // for large ones (quadratic otherwise).
    let mean_pairwise_distance = if n <= 512 {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                total += euclidean(&beliefs[i], &beliefs[j]);
                count += 1;
            }
        }
        total / count as f64
    } else {
        let mut total = 0.0;
        let mut count = 0usize;
        let stride = n / 512 + 1;
        for i in (0..n).step_by(stride) {
            for j in (i + 1..n).step_by(stride) {
                total += euclidean(&beliefs[i], &beliefs[j]);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    };

    Ok(CollapseReport {
        per_dim_std,
        effective_rank,
        mean_pairwise_distance,
    })
}

/// Batch means of both losses, the roundtrip error over the batch's predicted
/// beliefs f(h(o), a), and the resulting bound flag.
///
/// gap = gen_loss + epsilon - latent_loss; the bound holds when gap >= -1e-9.
/// For encoder families certified nonexpansive the flag is guaranteed true.
pub fn surrogate_bound_report(
    h: &EncoderModel,
    f: &WorldModelFn,
    g: &DecoderModel,
    batch: &[TransitionTriple],
) -> Result<BoundReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let latent = latent_loss(h, f, batch)?;
    let gen = generative_loss(h, f, g, batch)?;
    let predicted: Vec<Belief> = batch
        .iter()
        .map(|t| {
            let s = h.encode(&t.obs)?;
            f.predict(&s, &t.action)
        })
        .collect::<Result<_>>()?;
    let eps = roundtrip_epsilon(h, g, &predicted)?;
    let gap = gen.value + eps - latent.value;
    Ok(BoundReport {
        latent_loss: latent.value,
        gen_loss: gen.value,
        roundtrip_epsilon: eps,
        bound_satisfied: gap >= -1e-9,
        gap,
    })
}
