//! Scalar training objectives and the softmax map.

use crate::error::{Error, Result};

/// Mean over all entries of `(pred - target)^2`.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    sum / pred.len() as f64
}

pub fn mse_grad(pred: &[f64], target: &[f64], upstream: f64) -> Vec<f64> {
    let scale = 2.0 * upstream / pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| scale * (p - t)).collect()
}

/// Row-wise softmax of a `[batch, classes]` matrix, max-shifted.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &z in row {
            let e = (z - max).exp();
            total += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|p| *p /= total);
    }
    out
}

pub fn softmax_grad(probs: &[f64], grad_out: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.chunks(classes).zip(grad_out.chunks(classes)) {
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(a, b)| a * (b - inner)));
    }
    out
}

pub fn check_labels(labels: &[f64], classes: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l < 0.0 || l.fract() != 0.0 || l as usize >= classes {
                Err(Error::LabelOutOfRange {
                    label: l.max(0.0) as usize,
                    classes,
                })
            } else {
                Ok(l as usize)
            }
        })
        .collect()
}

/// Mean over the batch of `-log softmax(logits)[label]`, computed with the
/// log-sum-exp shift. Returns the loss and the softmax probabilities.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    for (row, &label) in logits.chunks(classes).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    (loss / labels.len() as f64, softmax(logits, classes))
}

/// `(softmax - onehot) / batch`, scaled by the upstream gradient.
pub fn softmax_cross_entropy_grad(
    probs: &[f64],
    labels: &[usize],
    classes: usize,
    upstream: f64,
) -> Vec<f64> {
    let scale = upstream / labels.len() as f64;
    let mut grad: Vec<f64> = probs.iter().map(|p| p * scale).collect();
    for (b, &label) in labels.iter().enumerate() {
        grad[b * classes + label] -= scale;
    }
    grad
}
