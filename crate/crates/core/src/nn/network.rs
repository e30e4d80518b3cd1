use rand::Rng;

use super::ops::{self, Phase, PoolCache};
use super::spec::{Activation, LayerSpec, ModelSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Values a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { input: Tensor },
    Pool(PoolCache),
    Relu { input: Tensor },
    Softmax { output: Tensor },
    Dropout { mask: Option<Tensor> },
    Flatten { input_shape: Vec<usize> },
    Dense { input: Tensor },
}

/// One layer's parameters together with its forward cache.
#[derive(Debug, Clone, Copy)]
pub struct LayerState<'a> {
    pub params: &'a [Tensor],
    pub cache: Option<&'a LayerCache>,
}

fn missing_cache(layer: &LayerSpec) -> Error {
    Error::Contract(format!("backward through {layer} without a matching forward cache"))
}

/// Runs one layer forward. `rng` is required only for train-phase dropout.
pub fn layer_forward<R: Rng + ?Sized>(
    layer: &LayerSpec,
    params: &[Tensor],
    input: &Tensor,
    phase: Phase,
    rng: Option<&mut R>,
) -> Result<(Tensor, LayerCache)> {
    Ok(match *layer {
        LayerSpec::Conv2d { stride, padding, .. } => {
            let out = ops::conv2d_forward(input, &params[0], &params[1], stride, padding)?;
            (out, LayerCache::Conv { input: input.clone() })
        }
        LayerSpec::Pool2d { window, mode } => {
            let (out, cache) = ops::pool2d_forward(input, window, mode)?;
            (out, LayerCache::Pool(cache))
        }
        LayerSpec::Activation(Activation::Relu) => (ops::relu(input), LayerCache::Relu { input: input.clone() }),
        LayerSpec::Activation(Activation::Softmax) => {
            let out = ops::softmax(input);
            (out.clone(), LayerCache::Softmax { output: out })
        }
        LayerSpec::Dropout { p } => {
            let (out, mask) = match (phase, rng) {
                (Phase::Train, Some(rng)) => ops::dropout_forward(input, p, rng, phase)?,
                (Phase::Train, None) if p > 0.0 => {
                    return Err(Error::Contract("train-phase dropout needs a random source".into()))
                }
                _ => (input.clone(), None),
            };
            (out, LayerCache::Dropout { mask })
        }
        LayerSpec::Flatten => (
            ops::flatten_forward(input),
            LayerCache::Flatten {
                input_shape: input.shape().to_vec(),
            },
        ),
        LayerSpec::Dense { .. } => {
            let out = ops::dense_forward(input, &params[0], &params[1])?;
            (out, LayerCache::Dense { input: input.clone() })
        }
    })
}

/// Backward through one layer: returns the input gradient and the parameter
/// gradients (weights, bias) for parametric layers.
pub fn layer_backward(layer: &LayerSpec, state: LayerState<'_>, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    let cache = state.cache.ok_or_else(|| missing_cache(layer))?;
    match (layer, cache) {
        (LayerSpec::Conv2d { stride, padding, .. }, LayerCache::Conv { input }) => {
            let g = ops::conv2d_backward(grad_out, input, &state.params[0], &state.params[1], *stride, *padding)?;
            Ok((g.input, vec![g.weights, g.bias]))
        }
        (LayerSpec::Pool2d { .. }, LayerCache::Pool(pc)) => Ok((ops::pool2d_backward(grad_out, pc)?, vec![])),
        (LayerSpec::Activation(Activation::Relu), LayerCache::Relu { input }) => {
            Ok((ops::relu_backward(grad_out, input)?, vec![]))
        }
        (LayerSpec::Activation(Activation::Softmax), LayerCache::Softmax { output }) => {
            Ok((ops::softmax_backward(grad_out, output)?, vec![]))
        }
        (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
            Ok((ops::dropout_backward(grad_out, mask.as_ref())?, vec![]))
        }
        (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => Ok((ops::unflatten(grad_out, input_shape)?, vec![])),
        (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
            let g = ops::dense_backward(grad_out, input, &state.params[0], &state.params[1])?;
            Ok((g.input, vec![g.weights, g.bias]))
        }
        _ => Err(missing_cache(layer)),
    }
}

/// Forward caches of every executed layer, in order.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<LayerCache>,
}

/// A model specification together with its flat parameter list
/// (weights then bias for each parametric layer, in layer order).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: Vec<Tensor>,
}

impl Network {
    /// Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for layer in &spec.layers {
            let shapes = layer.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let (fan_in, fan_out) = match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_size,
                    ..
                } => {
                    let k2 = kernel_size * kernel_size;
                    (in_channels * k2, out_channels * k2)
                }
                LayerSpec::Dense { in_units, out_units } => (in_units, out_units),
                _ => unreachable!("only conv and dense carry parameters"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let wshape = &shapes[0];
            let n: usize = wshape.iter().product();
            let w = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            params.push(Tensor::new(wshape.clone(), w)?);
            params.push(Tensor::zeros(&shapes[1]));
        }
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Shape(format!(
                "model needs {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i}: expected shape {s:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn spec_mut(&mut self) -> &mut ModelSpec {
        &mut self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelSpec, Vec<Tensor>) {
        (self.spec, self.params)
    }

    /// Indices into [`Network::params`] of dense-layer weight tensors.
    pub fn dense_weight_indices(&self) -> Vec<usize> {
        self.spec
            .layers
            .iter()
            .zip(self.spec.param_offsets())
            .filter(|(l, _)| matches!(l, LayerSpec::Dense { .. }))
            .map(|(_, r)| r.start)
            .collect()
    }

    /// Number of layers run to produce logits: a trailing softmax is left
    /// to the loss.
    fn logit_depth(&self) -> usize {
        match self.spec.layers.last() {
            Some(LayerSpec::Activation(Activation::Softmax)) => self.spec.layers.len() - 1,
            _ => self.spec.layers.len(),
        }
    }

    fn run<R: Rng + ?Sized>(&self, input: &Tensor, phase: Phase, mut rng: Option<&mut R>) -> Result<(Tensor, Trace)> {
        if input.shape() != self.spec.input_shape {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.spec.input_shape,
                input.shape()
            )));
        }
        let offsets = self.spec.param_offsets();
        let depth = self.logit_depth();
        let mut caches = Vec::with_capacity(depth);
        let mut x = input.clone();
        for (layer, range) in self.spec.layers[..depth].iter().zip(offsets) {
            let (y, cache) = layer_forward(layer, &self.params[range], &x, phase, rng.as_deref_mut())?;
            caches.push(cache);
            x = y;
        }
        Ok((x, Trace { caches }))
    }

    /// Train-phase forward to the logits, keeping caches for [`Network::backward`].
    pub fn forward_train<R: Rng + ?Sized>(&self, input: &Tensor, rng: &mut R) -> Result<(Tensor, Trace)> {
        self.run(input, Phase::Train, Some(rng))
    }

    /// Infer-phase logits (dropout is the identity).
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.run::<rand_chacha::ChaCha8Rng>(input, Phase::Infer, None)?.0)
    }

    pub fn predict_proba(&self, input: &Tensor) -> Result<Tensor> {
        Ok(ops::softmax(&self.logits(input)?))
    }

    /// Backpropagates `grad_logits` and returns one gradient per parameter tensor.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let offsets = self.spec.param_offsets();
        let depth = trace.caches.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut g = grad_logits.clone();
        for i in (0..depth).rev() {
            let layer = &self.spec.layers[i];
            let range = offsets[i].clone();
            let state = LayerState {
                params: &self.params[range.clone()],
                cache: Some(&trace.caches[i]),
            };
            let (gin, pgrads) = layer_backward(layer, state, &g)?;
            for (slot, pg) in range.zip(pgrads) {
                grads[slot] = Some(pg);
            }
            g = gin;
        }
        Ok(grads
            .into_iter()
            .zip(&self.params)
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_without_cache_is_contract_error() {
        let layer = LayerSpec::Activation(Activation::Relu);
        let state = LayerState { params: &[], cache: None };
        let err = layer_backward(&layer, state, &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));

        let cache = LayerCache::Flatten { input_shape: vec![2] };
        let wrong = LayerState { params: &[], cache: Some(&cache) };
        assert!(matches!(layer_backward(&layer, wrong, &Tensor::zeros(&[2])), Err(Error::Contract(_))));
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let spec = ModelSpec::from_layer_text([1, 6, 6], 3, "conv(2,3,valid), relu, flatten, dense(3), softmax").unwrap();
        let net = Network::init(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let conv_limit = (6.0f64 / (9.0 + 18.0)).sqrt();
        assert!(net.params()[0].data().iter().all(|w| w.abs() <= conv_limit));
        assert!(net.params()[1].data().iter().all(|&b| b == 0.0));
        assert_eq!(net.params()[2].shape(), [3, 32]);
        assert_eq!(net.dense_weight_indices(), vec![2]);
    }

    #[test]
    fn trailing_softmax_is_excluded_from_logits() {
        let spec = ModelSpec::from_layer_text([1, 2, 2], 4, "flatten, softmax").unwrap();
        let net = Network::from_parts(spec, vec![]).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(net.logits(&x).unwrap().data(), [1., 2., 3., 4.]);
        let p = net.predict_proba(&x).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }
}
