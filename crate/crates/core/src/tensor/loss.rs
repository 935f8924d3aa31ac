//! Scalar losses with fused forward/backward.

use super::ops::softmax_in_place;
use super::{Op, Result, Tensor, TensorError};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Smallest standard deviation a mixture component can have.
pub const MIN_STD: f64 = 1e-6;

fn rows_of(op: &'static str, x: &Tensor, width: usize, n_targets: usize) -> Result<usize> {
    let s = x.shape();
    if s.len() != 2 || s[1] != width || n_targets != s[0] {
        return Err(TensorError::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![n_targets, width],
        });
    }
    Ok(s[0])
}

/// Batch-mean categorical cross-entropy of `softmax(logits)` against target
/// distributions (`targets` holds one length-K row per sample).
pub fn soft_cross_entropy(logits: &Tensor, targets: &[f64]) -> Result<Tensor> {
    let k = *logits.shape().last().unwrap_or(&0);
    if k == 0 || targets.len() % k != 0 {
        return Err(TensorError::Shape {
            op: "soft_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let b = rows_of("soft_cross_entropy", logits, k, targets.len() / k)?;
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut local = vec![0.0; logits.len()];
    for ((z, t), gl) in logits
        .values()
        .chunks(k)
        .zip(targets.chunks(k))
        .zip(local.chunks_mut(k))
    {
        let mut p = z.to_vec();
        softmax_in_place(&mut p);
        // a_k = dL/dp_k, zero where the clamp is active
        let mut a = vec![0.0; k];
        for i in 0..k {
            let clamped = p[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= t[i] * clamped.ln();
            if p[i] > PROB_CLAMP && p[i] < 1.0 - PROB_CLAMP {
                a[i] = -t[i] / p[i];
            }
        }
        let ap: f64 = a.iter().zip(&p).map(|(x, y)| x * y).sum();
        for j in 0..k {
            gl[j] = (a[j] * p[j] - p[j] * ap) * inv_b;
        }
    }
    Tensor::from_op(
        "soft_cross_entropy",
        vec![1],
        vec![loss * inv_b],
        Op::Precomputed(local),
        vec![logits.clone()],
    )
}

/// Batch-mean `|y - ŷ|` for a `[B, 1]` prediction.
pub fn mean_absolute_error(pred: &Tensor, targets: &[f64]) -> Result<Tensor> {
    let b = rows_of("mean_absolute_error", pred, 1, targets.len())?;
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let local = pred
        .values()
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let d = p - y;
            loss += d.abs();
            if d > 0.0 {
                inv_b
            } else if d < 0.0 {
                -inv_b
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_op(
        "mean_absolute_error",
        vec![1],
        vec![loss * inv_b],
        Op::Precomputed(local),
        vec![pred.clone()],
    )
}

/// Mixture parameters decoded from a raw `3K` output row: mixture logits,
/// means, and pre-softplus standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn decode_mixture(raw: &[f64]) -> DecodedMixture {
    let k = raw.len() / 3;
    let mut weights = raw[..k].to_vec();
    softmax_in_place(&mut weights);
    DecodedMixture {
        weights,
        means: raw[k..2 * k].to_vec(),
        stds: raw[2 * k..].iter().map(|&s| softplus(s) + MIN_STD).collect(),
    }
}

pub fn normal_pdf(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Batch-mean negative log-likelihood of scalar targets under per-sample
/// Gaussian mixtures; `raw` is `[B, 3K]`.
pub fn gmm_nll(raw: &Tensor, targets: &[f64]) -> Result<Tensor> {
    let w = *raw.shape().last().unwrap_or(&0);
    if w == 0 || w % 3 != 0 {
        return Err(TensorError::Shape {
            op: "gmm_nll",
            lhs: raw.shape().to_vec(),
            rhs: vec![targets.len(), w],
        });
    }
    let b = rows_of("gmm_nll", raw, w, targets.len())?;
    let k = w / 3;
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut local = vec![0.0; raw.len()];
    for ((row, &y), gl) in raw.values().chunks(w).zip(targets).zip(local.chunks_mut(w)) {
        let m = decode_mixture(row);
        let comps: Vec<f64> = (0..k)
            .map(|i| m.weights[i] * normal_pdf(y, m.means[i], m.stds[i]))
            .collect();
        let p: f64 = comps.iter().sum();
        if p > PROB_CLAMP {
            loss -= p.ln();
            for i in 0..k {
                let resp = comps[i] / p;
                let (mu, sd) = (m.means[i], m.stds[i]);
                let d = y - mu;
                gl[i] = (m.weights[i] - resp) * inv_b;
                gl[k + i] = -resp * d / (sd * sd) * inv_b;
                let dsd = -resp * (d * d / (sd * sd * sd) - 1.0 / sd);
                gl[2 * k + i] = dsd * sigmoid(row[2 * k + i]) * inv_b;
            }
        } else {
            loss -= PROB_CLAMP.ln();
        }
    }
    Tensor::from_op(
        "gmm_nll",
        vec![1],
        vec![loss * inv_b],
        Op::Precomputed(local),
        vec![raw.clone()],
    )
}
