//! Cross-entropy losses and weight penalties.

use crate::error::{Error, Result};
use crate::nn::{ops::softmax, Tensor};

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Mean binary cross-entropy over `t` predictions.
pub fn binary_cross_entropy(predicted: &[f64], actual: &[u8]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Data("binary cross-entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, (&p, &y)) in predicted.iter().zip(actual).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Data(format!("prediction {i} = {p} outside [0, 1]")));
        }
        let p = clamp_prob(p);
        total += match y {
            0 => (1.0 - p).ln(),
            1 => p.ln(),
            other => return Err(Error::Data(format!("label {i} = {other} is not 0 or 1"))),
        };
    }
    Ok(-total / predicted.len() as f64)
}

fn batch_dims(t: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = match *t.shape() {
        [b, k] => (b, k),
        ref s => return Err(Error::Shape(format!("expected [batch, K], got {s:?}"))),
    };
    if labels.len() != b {
        return Err(Error::Shape(format!("{b} rows but {} labels", labels.len())));
    }
    if let Some(row) = labels.iter().position(|&l| l >= k) {
        return Err(Error::Data(format!(
            "row {row}: label {} out of range for {k} classes",
            labels[row]
        )));
    }
    Ok((b, k))
}

/// `-(1/batch) Σ ln p[row, label]` over probability rows.
pub fn categorical_cross_entropy(predicted: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = batch_dims(predicted, labels)?;
    let mut total = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        let probs = &predicted.data()[row * k..(row + 1) * k];
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("row {row} sums to {s}, not 1")));
        }
        total += clamp_prob(probs[label]).ln();
    }
    Ok(-total / b as f64)
}

/// Cross-entropy of one logit vector against `label`, and the gradient of
/// `scale * loss` with respect to the logits.
pub fn softmax_ce_sample(logits: &Tensor, label: usize, scale: f64) -> Result<(f64, Tensor)> {
    if label >= logits.len() {
        return Err(Error::Data(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut p = softmax(logits);
    let loss = -clamp_prob(p.data()[label]).ln();
    p.data_mut()[label] -= 1.0;
    p.scale(scale);
    Ok((loss, p))
}

/// `(softmax(logits) - onehot(labels)) / batch`.
pub fn softmax_ce_gradient(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = batch_dims(logits, labels)?;
    let mut out = Vec::with_capacity(b * k);
    for (row, &label) in labels.iter().enumerate() {
        let z = Tensor::from_vec(logits.data()[row * k..(row + 1) * k].to_vec());
        let (_, g) = softmax_ce_sample(&z, label, 1.0 / b as f64)?;
        out.extend_from_slice(g.data());
    }
    Tensor::new(vec![b, k], out)
}

/// Row-wise softmax of a `[batch, K]` logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let k = match *logits.shape() {
        [_, k] => k,
        ref s => return Err(Error::Shape(format!("expected [batch, K], got {s:?}"))),
    };
    let data = logits
        .data()
        .chunks(k)
        .flat_map(|row| softmax(&Tensor::from_vec(row.to_vec())).into_data())
        .collect();
    Tensor::new(logits.shape().to_vec(), data)
}

/// Squared L2 norm over all tensors.
pub fn l2_penalty(weights: &[&Tensor]) -> f64 {
    weights.iter().flat_map(|t| t.data()).map(|w| w * w).sum()
}

pub fn l1_penalty(weights: &[&Tensor]) -> f64 {
    weights.iter().flat_map(|t| t.data()).map(|w| w.abs()).sum()
}

/// `Σ sqrt(w² + ε)`, a differentiable stand-in for the L1 norm.
pub fn l1_smoothed(weights: &[&Tensor], epsilon: f64) -> f64 {
    weights
        .iter()
        .flat_map(|t| t.data())
        .map(|w| (w * w + epsilon).sqrt())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegConfig {
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub epsilon_l1: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            epsilon_l1: 1e-8,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_l2", self.lambda_l2),
            ("epsilon_l1", self.epsilon_l1),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.lambda_l1 > 0.0 || self.lambda_l2 > 0.0
    }

    /// Gradient of `λ₁·l1_smoothed(w) + λ₂·‖w‖²` for one tensor.
    pub fn gradient(&self, w: &Tensor) -> Tensor {
        w.map(|x| {
            let mut g = 2.0 * self.lambda_l2 * x;
            if self.lambda_l1 > 0.0 {
                let d = (x * x + self.epsilon_l1).sqrt();
                if d > 0.0 {
                    g += self.lambda_l1 * x / d;
                }
            }
            g
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub data_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

/// Adds the weighted penalties of `weights` (dense-layer weights in training;
/// biases are never passed) to `data_loss`.
pub fn regularized_loss(data_loss: f64, weights: &[&Tensor], cfg: &RegConfig) -> LossValue {
    let mut reg_loss = 0.0;
    if cfg.lambda_l1 > 0.0 {
        reg_loss += cfg.lambda_l1 * l1_smoothed(weights, cfg.epsilon_l1);
    }
    if cfg.lambda_l2 > 0.0 {
        reg_loss += cfg.lambda_l2 * l2_penalty(weights);
    }
    LossValue {
        data_loss,
        reg_loss,
        total: data_loss + reg_loss,
    }
}
