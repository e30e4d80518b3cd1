//! Central finite-difference checks of every layer's backward pass.
//!
//! Each check draws a random small instance, contracts the layer output
//! with a random cotangent `c` to get the scalar `L = Σ c ⊙ f(inputs)`, and
//! compares the analytic gradients of `L` with `(L(x+h) − L(x−h)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, Padding, PoolMode};
use super::tensor::Tensor;
use crate::error::Result;
use crate::loss::softmax_ce_sample;

pub const STEP: f64 = 1e-5;

/// Components where both gradients are below this are compared absolutely.
const TINY: f64 = 1e-7;

/// Largest relative error found for one layer kind.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub layer: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < TINY {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive extents")
}

/// Values bounded away from zero, so ReLU never sits on its kink.
fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    random_tensor(rng, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Distinct values spaced at least 0.01 apart, so the max of any window
/// is separated from the runner-up.
fn distinct<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).expect("positive extents")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Max relative error between `analytic[i]` and the numerical gradient of
/// `loss` with respect to `inputs[i]`.
fn compare(loss: &dyn Fn(&[Tensor]) -> Result<f64>, inputs: &[Tensor], analytic: &[Tensor]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * STEP);
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}

fn conv_case<R: Rng>(rng: &mut R, padding: Padding) -> Result<f64> {
    let c_in = rng.random_range(1..=3);
    let c_out = rng.random_range(1..=3);
    let h = rng.random_range(4..=7);
    let w = rng.random_range(4..=7);
    let k = rng.random_range(1..=4);
    let stride = rng.random_range(1..=2);
    let x = random_tensor(rng, &[c_in, h, w]);
    let wt = random_tensor(rng, &[c_out, c_in, k, k]);
    let b = random_tensor(rng, &[c_out]);
    let y = ops::conv2d_forward(&x, &wt, &b, stride, padding)?;
    let c = random_tensor(rng, y.shape());
    let g = ops::conv2d_backward(&c, &x, &wt, &b, stride, padding)?;
    let loss = |t: &[Tensor]| Ok(dot(&c, &ops::conv2d_forward(&t[0], &t[1], &t[2], stride, padding)?));
    compare(&loss, &[x, wt, b], &[g.input, g.weights, g.bias])
}

fn pool_case<R: Rng>(rng: &mut R, mode: PoolMode) -> Result<f64> {
    let ch = rng.random_range(1..=3);
    let win = rng.random_range(1..=3);
    let h = rng.random_range(win..=7);
    let w = rng.random_range(win..=7);
    let x = distinct(rng, &[ch, h, w]);
    let (y, cache) = ops::pool2d_forward(&x, win, mode)?;
    let c = random_tensor(rng, y.shape());
    let g = ops::pool2d_backward(&c, &cache)?;
    let loss = |t: &[Tensor]| Ok(dot(&c, &ops::pool2d_forward(&t[0], win, mode)?.0));
    compare(&loss, &[x], &[g])
}

fn relu_case<R: Rng>(rng: &mut R) -> Result<f64> {
    let n = rng.random_range(1..=30);
    let x = away_from_zero(rng, &[n]);
    let c = random_tensor(rng, &[n]);
    let g = ops::relu_backward(&c, &x)?;
    let loss = |t: &[Tensor]| Ok(dot(&c, &ops::relu(&t[0])));
    compare(&loss, &[x], &[g])
}

fn dense_case<R: Rng>(rng: &mut R) -> Result<f64> {
    let n_in = rng.random_range(1..=12);
    let n_out = rng.random_range(1..=6);
    let x = random_tensor(rng, &[n_in]);
    let w = random_tensor(rng, &[n_out, n_in]);
    let b = random_tensor(rng, &[n_out]);
    let c = random_tensor(rng, &[n_out]);
    let g = ops::dense_backward(&c, &x, &w, &b)?;
    let loss = |t: &[Tensor]| Ok(dot(&c, &ops::dense_forward(&t[0], &t[1], &t[2])?));
    compare(&loss, &[x, w, b], &[g.input, g.weights, g.bias])
}

fn dropout_case<R: Rng>(rng: &mut R) -> Result<f64> {
    let n = rng.random_range(1..=30);
    let p = rng.random_range(0.1..0.7);
    let x = random_tensor(rng, &[n]);
    let (_, mask) = ops::dropout_forward(&x, p, rng, ops::Phase::Train)?;
    let mask = mask.expect("train phase with p > 0 draws a mask");
    let c = random_tensor(rng, &[n]);
    let g = ops::dropout_backward(&c, Some(&mask))?;
    let loss = |t: &[Tensor]| Ok(dot(&c, &ops::apply_mask(&t[0], &mask)?));
    compare(&loss, &[x], &[g])
}

fn softmax_case<R: Rng>(rng: &mut R) -> Result<f64> {
    let k = rng.random_range(2..=8);
    let z = random_tensor(rng, &[k]).map(|v| 3.0 * v);
    let c = random_tensor(rng, &[k]);
    let g = ops::softmax_backward(&c, &ops::softmax(&z))?;
    let loss = |t: &[Tensor]| Ok(dot(&c, &ops::softmax(&t[0])));
    compare(&loss, &[z], &[g])
}

fn softmax_ce_case<R: Rng>(rng: &mut R) -> Result<f64> {
    let k = rng.random_range(2..=8);
    let label = rng.random_range(0..k);
    let z = random_tensor(rng, &[k]).map(|v| 3.0 * v);
    let (_, g) = softmax_ce_sample(&z, label, 1.0)?;
    let loss = |t: &[Tensor]| Ok(softmax_ce_sample(&t[0], label, 1.0)?.0);
    compare(&loss, &[z], &[g])
}

/// Runs `instances` random checks per layer kind.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    type Case = fn(&mut ChaCha8Rng) -> Result<f64>;
    let cases: [(&'static str, Case); 9] = [
        ("conv2d valid", |r| conv_case(r, Padding::Valid)),
        ("conv2d same", |r| conv_case(r, Padding::Same)),
        ("max pool", |r| pool_case(r, PoolMode::Max)),
        ("mean pool", |r| pool_case(r, PoolMode::Mean)),
        ("relu", relu_case),
        ("dense", dense_case),
        ("dropout (fixed mask)", dropout_case),
        ("softmax", softmax_case),
        ("softmax + cross-entropy", softmax_ce_case),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .iter()
        .map(|&(layer, case)| {
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                worst = worst.max(case(&mut rng)?);
            }
            Ok(CheckResult {
                layer,
                instances,
                max_rel_err: worst,
            })
        })
        .collect()
}
