//! Mini-batch iteration and parameter updates.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One shuffled epoch split into consecutive batches of indices into the
/// dataset. The final batch may be short; no sample is dropped.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// A mini-batch view over a dataset.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub labels: Vec<usize>,
}

pub fn batch_iterator<'a, R: Rng + ?Sized>(
    inputs: &'a [Tensor],
    labels: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch<'a>>> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    Ok(epoch_batches(inputs.len(), batch_size, rng)?
        .into_iter()
        .map(|idx| Batch {
            inputs: idx.iter().map(|&i| &inputs[i]).collect(),
            labels: idx.iter().map(|&i| labels[i]).collect(),
        })
        .collect())
}

fn check_pairs(params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.check_same_shape(g)?;
    }
    Ok(())
}

/// `θ ← θ − α∇θ`.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], alpha: f64) -> Result<()> {
    check_pairs(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-alpha, g)?;
    }
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh zero moments with the usual 0.9 / 0.999 / 1e-8 constants.
    pub fn new(param_shapes: &[&[usize]], alpha: f64) -> Self {
        let zeros: Vec<Tensor> = param_shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            alpha,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn for_params(params: &[Tensor], alpha: f64) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(Tensor::shape).collect();
        Self::new(&shapes, alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "adam decay rates must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::Config("adam needs epsilon > 0 and alpha >= 0".into()));
        }
        Ok(())
    }
}

/// One Adam update with bias-corrected moments. The second moment tracks
/// the elementwise squared gradient.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    check_pairs(params, grads)?;
    check_pairs(params, &state.m)?;
    check_pairs(params, &state.v)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { alpha: f64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Sgd { alpha } => sgd_step(params, grads, *alpha),
            Optimizer::Adam(state) => adam_step(params, grads, state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(10, 4, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let one = epoch_batches(5, 64, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert!(epoch_batches(0, 4, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_batches() {
        let a = epoch_batches(100, 7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = epoch_batches(100, 7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_fixtures() {
        let mut p = vec![Tensor::from_vec(vec![1.0])];
        sgd_step(&mut p, &[Tensor::from_vec(vec![0.0])], 0.1).unwrap();
        assert_eq!(p[0].data(), [1.0]);
        sgd_step(&mut p, &[Tensor::from_vec(vec![2.0])], 0.1).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);

        let g = [Tensor::from_vec(vec![0.5])];
        let mut twice = vec![Tensor::from_vec(vec![1.0])];
        sgd_step(&mut twice, &g, 0.25).unwrap();
        sgd_step(&mut twice, &g, 0.25).unwrap();
        let mut once = vec![Tensor::from_vec(vec![1.0])];
        sgd_step(&mut once, &g, 0.5).unwrap();
        assert!((twice[0].data()[0] - once[0].data()[0]).abs() < 1e-15);

        assert!(sgd_step(&mut once, &[Tensor::zeros(&[2])], 0.1).is_err());
    }

    #[test]
    fn sgd_converges_on_parabola() {
        let mut p = vec![Tensor::from_vec(vec![1.0])];
        for _ in 0..200 {
            let g = [p[0].map(|x| 2.0 * x)];
            sgd_step(&mut p, &g, 0.1).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-6);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![Tensor::from_vec(vec![0.0])];
        let mut st = AdamState::for_params(&p, 0.1);
        adam_step(&mut p, &[Tensor::from_vec(vec![1.0])], &mut st).unwrap();
        assert!((p[0].data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
        assert!((st.m[0].data()[0] - 0.1).abs() < 1e-15);
        assert!((st.v[0].data()[0] - 0.001).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![Tensor::from_vec(vec![0.3, -2.0])];
        let mut st = AdamState::for_params(&p, 0.1);
        for _ in 0..5 {
            adam_step(&mut p, &[Tensor::zeros(&[2])], &mut st).unwrap();
        }
        assert_eq!(p[0].data(), [0.3, -2.0]);
    }

    #[test]
    fn adam_constant_gradient_steps_approach_alpha() {
        let mut p = vec![Tensor::from_vec(vec![0.0])];
        let mut st = AdamState::for_params(&p, 0.01);
        let g = [Tensor::from_vec(vec![-3.0])];
        let mut prev = 0.0;
        for _ in 0..2000 {
            adam_step(&mut p, &g, &mut st).unwrap();
            let now = p[0].data()[0];
            let delta = now - prev;
            assert!(delta > 0.0 && delta <= 0.01 * (1.0 + 1e-12));
            prev = now;
        }
        let mut q = p.clone();
        adam_step(&mut q, &g, &mut st).unwrap();
        assert!(((q[0].data()[0] - p[0].data()[0]) - 0.01).abs() < 1e-8);
    }
}
