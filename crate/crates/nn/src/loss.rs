//! Scalar losses and their gradients.

use crate::error::{NnError, Result};
use crate::layer::sigmoid;

pub const BCE_EPS: f64 = 1e-7;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(NnError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Mean squared error over all elements. Empty inputs give 0.
pub fn mse(prediction: &[f64], target: &[f64]) -> Result<f64> {
    check_len(prediction, target)?;
    if prediction.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / prediction.len() as f64)
}

/// d mse / d prediction.
pub fn mse_grad(prediction: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len(prediction, target)?;
    let scale = 2.0 / prediction.len().max(1) as f64;
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| scale * (p - t))
        .collect())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Mean binary cross-entropy of probabilities `p` against targets `y`.
pub fn bce(p: &[f64], y: &[f64]) -> Result<f64> {
    check_len(p, y)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// d bce / d p, evaluated at the clamped probability.
pub fn bce_grad(p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_len(p, y)?;
    let n = p.len().max(1) as f64;
    Ok(p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            (p - y) / (p * (1.0 - p)) / n
        })
        .collect())
}

/// KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dimensions.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    check_len(mu, logvar)?;
    Ok(-0.5
        * mu.iter()
            .zip(logvar)
            .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
            .sum::<f64>())
}

/// Returns (d kl / d mu, d kl / d logvar).
pub fn kl_gaussian_grad(mu: &[f64], logvar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(mu, logvar)?;
    Ok((
        mu.to_vec(),
        logvar.iter().map(|&lv| 0.5 * (lv.exp() - 1.0)).collect(),
    ))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy against a class index; returns (loss, d loss / d logits).
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    p[target] -= 1.0;
    (loss, p)
}

/// Per-output sigmoid cross-entropy on logits; returns (mean loss, gradient).
pub fn sigmoid_cross_entropy(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(logits, targets)?;
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            // log(1 + e^z) - y z, written to stay finite for large |z|
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - y) / n
        })
        .collect();
    Ok((loss / n, grad))
}
