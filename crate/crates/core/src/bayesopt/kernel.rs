//! Stationary covariance functions over the unit hypercube.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    /// Squared exponential with one length scale per dimension.
    SeArd,
    #[default]
    Matern52,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::SeArd => "se",
            KernelKind::Matern52 => "matern52",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se" | "se-ard" | "se_ard" | "rbf" => Ok(KernelKind::SeArd),
            "matern52" | "matern" | "matern-5/2" => Ok(KernelKind::Matern52),
            other => Err(Error::Config(format!(
                "unknown kernel {other:?}, expected \"se\" or \"matern52\""
            ))),
        }
    }

    /// Covariance for scaled squared distance `r2 = Σ (Δ_d/ℓ_d)²`.
    pub(crate) fn from_r2(&self, theta0: f64, r2: f64) -> f64 {
        match self {
            KernelKind::SeArd => theta0 * (-0.5 * r2).exp(),
            KernelKind::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                theta0 * (1.0 + s5r + 5.0 / 3.0 * r2) * (-s5r).exp()
            }
        }
    }
}

pub(crate) fn scaled_r2(x: &[f64], y: &[f64], lengthscales: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(lengthscales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum()
}

/// `k(x, x')` for the given amplitude and per-dimension length scales.
pub fn kernel_eval(kind: KernelKind, x: &[f64], x2: &[f64], theta0: f64, lengthscales: &[f64]) -> Result<f64> {
    if x.len() != x2.len() || x.len() != lengthscales.len() {
        return Err(Error::Shape(format!(
            "kernel inputs of length {} and {} with {} length scales",
            x.len(),
            x2.len(),
            lengthscales.len()
        )));
    }
    if !(theta0 > 0.0) || lengthscales.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Config("kernel amplitude and length scales must be positive".into()));
    }
    Ok(kind.from_r2(theta0, scaled_r2(x, x2, lengthscales)))
}
