//! Gaussian-process regression with marginal-likelihood hyperparameter fit.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{scaled_r2, KernelKind};
use crate::error::{Error, Result};

/// Diagonal jitter tried in turn when the covariance will not factorize.
const JITTER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const FIT_STARTS: usize = 16;
const FIT_ITERS: usize = 50;
const FIT_SEED: u64 = 0x5eed_6b70;

const LOG_THETA0: (f64, f64) = (-3.0, 3.0);
const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_NOISE_MAX: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub theta0: f64,
    pub lengthscales: Vec<f64>,
    /// Observation noise variance, in the model's (possibly standardized) units.
    pub noise: f64,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    kind: KernelKind,
    hyper: GpHyper,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn gram(kind: KernelKind, x: &[Vec<f64>], h: &GpHyper) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| kind.from_r2(h.theta0, scaled_r2(&x[i], &x[j], &h.lengthscales)))
}

/// Factorizes `K + (noise + jitter) I`, escalating the jitter as needed.
fn factorize(k: &DMatrix<f64>, noise: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    JITTER.iter().find_map(|&j| {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += noise + j;
        }
        Cholesky::new(m).map(|c| (c, j))
    })
}

fn check_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} points but {} targets", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Data("a GP needs at least one observation".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("GP inputs have differing dimensions".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("GP targets must be finite".into()));
    }
    Ok(d)
}

impl GpModel {
    /// Conditions on `(x, y)` with fixed hyperparameters and zero prior
    /// mean, without rescaling the targets.
    pub fn with_hyper(kind: KernelKind, x: Vec<Vec<f64>>, y: Vec<f64>, hyper: GpHyper) -> Result<Self> {
        Self::build(kind, x, y, hyper, 0.0, 1.0)
    }

    fn build(kind: KernelKind, x: Vec<Vec<f64>>, y: Vec<f64>, hyper: GpHyper, y_mean: f64, y_scale: f64) -> Result<Self> {
        let d = check_inputs(&x, &y)?;
        if hyper.lengthscales.len() != d {
            return Err(Error::Shape(format!(
                "{} length scales for {d}-dimensional inputs",
                hyper.lengthscales.len()
            )));
        }
        if !(hyper.theta0 > 0.0) || hyper.lengthscales.iter().any(|&l| !(l > 0.0)) || !(hyper.noise >= 0.0) {
            return Err(Error::Config("GP hyperparameters must be positive".into()));
        }
        let k = gram(kind, &x, &hyper);
        let (chol, jitter) = factorize(&k, hyper.noise).ok_or_else(|| {
            Error::Numerical(format!(
                "GP covariance of {} points is not positive definite even with jitter {:e} \
                 (amplitude {}, noise {}); inputs are likely duplicated or ill-conditioned",
                x.len(),
                JITTER[JITTER.len() - 1],
                hyper.theta0,
                hyper.noise
            ))
        })?;
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));
        let alpha = chol.solve(&ys);
        Ok(Self {
            kind,
            hyper,
            x,
            y,
            y_mean,
            y_scale,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    /// Jitter that was needed to factorize the covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Noise variance in target units.
    pub fn noise_variance(&self) -> f64 {
        self.hyper.noise * self.y_scale * self.y_scale
    }

    /// Posterior mean and variance of the latent function at `x`, in target
    /// units. Variance is clamped at zero.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "query has {} dimensions, model has {}",
                x.len(),
                self.dim()
            )));
        }
        let h = &self.hyper;
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| self.kind.from_r2(h.theta0, scaled_r2(xi, x, &h.lengthscales))),
        );
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("factor has a positive diagonal");
        let var = (h.theta0 - v.dot(&v)).max(0.0);
        Ok((self.y_mean + self.y_scale * mean, var * self.y_scale * self.y_scale))
    }

    /// Log marginal likelihood of the (scaled) targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.x.len() as f64;
        let ys = DVector::from_iterator(self.y.len(), self.y.iter().map(|v| (v - self.y_mean) / self.y_scale));
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * ys.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * PI).ln()
    }
}

fn lml(kind: KernelKind, x: &[Vec<f64>], ys: &DVector<f64>, theta: &[f64]) -> f64 {
    let d = theta.len() - 2;
    let h = GpHyper {
        theta0: theta[0].exp(),
        lengthscales: theta[1..=d].iter().map(|v| v.exp()).collect(),
        noise: theta[d + 1].exp(),
    };
    let k = gram(kind, x, &h);
    match factorize(&k, h.noise) {
        Some((c, _)) => {
            let a = c.solve(ys);
            let log_det: f64 = c.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
            let v = -0.5 * ys.dot(&a) - log_det - 0.5 * ys.len() as f64 * (2.0 * PI).ln();
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        None => f64::NEG_INFINITY,
    }
}

/// Fits amplitude, length scales and noise (never below `noise_floor`) by
/// maximizing the log marginal likelihood of the standardized targets.
/// The search is multi-start coordinate ascent in log space.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], kind: KernelKind, noise_floor: f64) -> Result<GpModel> {
    let d = check_inputs(x, y)?;
    if x.len() < 2 {
        return Err(Error::Data("fitting a GP needs at least 2 observations".into()));
    }
    if x.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data("GP inputs must lie in the unit hypercube".into()));
    }
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let y_scale = if sd > 1e-12 * (1.0 + y_mean.abs()) { sd } else { 1.0 };
    let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));

    let log_floor = noise_floor.max(1e-12).ln();
    let mut bounds = vec![LOG_THETA0];
    bounds.extend(std::iter::repeat_n(LOG_LENGTH, d));
    bounds.push((log_floor, LOG_NOISE_MAX.max(log_floor)));

    let mut rng = ChaCha8Rng::seed_from_u64(FIT_SEED);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in 0..FIT_STARTS {
        let mut theta: Vec<f64> = if start == 0 {
            let mut t = vec![0.0];
            t.extend(std::iter::repeat_n(0.3f64.ln(), d));
            t.push((1e-3f64).ln().clamp(bounds[d + 1].0, bounds[d + 1].1));
            t
        } else {
            bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect()
        };
        let mut value = lml(kind, x, &ys, &theta);
        let mut steps = vec![1.0; theta.len()];
        for _ in 0..FIT_ITERS {
            for c in 0..theta.len() {
                let (lo, hi) = bounds[c];
                let mut moved = false;
                for dir in [1.0, -1.0] {
                    let mut trial = theta.clone();
                    trial[c] = (theta[c] + dir * steps[c]).clamp(lo, hi);
                    if trial[c] == theta[c] {
                        continue;
                    }
                    let v = lml(kind, x, &ys, &trial);
                    if v > value {
                        theta = trial;
                        value = v;
                        moved = true;
                        break;
                    }
                }
                if !moved {
                    steps[c] *= 0.5;
                }
            }
            if steps.iter().all(|&s| s < 1e-4) {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, theta));
        }
    }
    let (value, theta) = best.expect("at least one start");
    if value == f64::NEG_INFINITY {
        return Err(Error::Numerical(format!(
            "no GP hyperparameters give a factorizable covariance for {} points",
            x.len()
        )));
    }
    let hyper = GpHyper {
        theta0: theta[0].exp(),
        lengthscales: theta[1..=d].iter().map(|v| v.exp()).collect(),
        noise: theta[d + 1].exp(),
    };
    GpModel::build(kind, x.to_vec(), y.to_vec(), hyper, y_mean, y_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize) -> GpHyper {
        GpHyper {
            theta0: 1.0,
            lengthscales: vec![1.0; d],
            noise: 0.0,
        }
    }

    #[test]
    fn two_point_fixture_matches_hand_algebra() {
        let gp = GpModel::with_hyper(KernelKind::SeArd, vec![vec![0.0], vec![1.0]], vec![0.0, 1.0], unit(1)).unwrap();
        let (m, v) = gp.posterior(&[0.5]).unwrap();
        // K = [[1, a], [a, 1]], k* = [b, b] with a = e^{-1/2}, b = e^{-1/8}.
        let a = (-0.5f64).exp();
        let b = (-0.125f64).exp();
        let det = 1.0 - a * a;
        let mean = b * (1.0 - a) / det;
        let var = 1.0 - 2.0 * b * b * (1.0 - a) / det;
        assert!((m - mean).abs() < 1e-12 && (v - var).abs() < 1e-12);
        assert!((m - 0.5493).abs() < 1e-3 && (v - 0.0304).abs() < 1e-3, "{m} {v}");
    }

    #[test]
    fn interpolates_without_noise() {
        let x = vec![vec![0.1, 0.2], vec![0.7, 0.4], vec![0.3, 0.9]];
        let y = vec![1.5, -0.5, 0.25];
        let gp = GpModel::with_hyper(KernelKind::Matern52, x.clone(), y.clone(), unit(2)).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (m, v) = gp.posterior(xi).unwrap();
            assert!((m - yi).abs() < 1e-8 && v < 1e-8);
        }
        let (m, v) = gp.posterior(&[50.0, -50.0]).unwrap();
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert!(gp.posterior(&[0.5]).is_err());
    }

    #[test]
    fn duplicate_points_need_noise() {
        let x = vec![vec![0.5], vec![0.5], vec![0.1]];
        let y = vec![1.0, 2.0, 0.0];
        let gp = gp_fit(&x, &y, KernelKind::Matern52, 1e-6).unwrap();
        assert!(gp.hyper().noise > 0.0);
        let (m, _) = gp.posterior(&[0.5]).unwrap();
        assert!(m > 0.9 && m < 2.1);
    }

    #[test]
    fn constant_targets() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let gp = gp_fit(&x, &[3.25; 5], KernelKind::SeArd, 1e-6).unwrap();
        for q in [0.0, 0.33, 0.9] {
            assert!((gp.posterior(&[q]).unwrap().0 - 3.25).abs() < 1e-6);
        }
    }

    #[test]
    fn variance_at_data_bounded_by_noise() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, (i * 7 % 6) as f64 / 5.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        for kind in [KernelKind::SeArd, KernelKind::Matern52] {
            let gp = gp_fit(&x, &y, kind, 1e-6).unwrap();
            for p in &x {
                assert!(gp.posterior(p).unwrap().1 <= gp.noise_variance() + 1e-6);
            }
        }
    }
}
