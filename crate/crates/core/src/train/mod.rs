//! The epoch loop, early stopping, model evaluation and checkpoints.

mod checkpoint;
mod history;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use checkpoint::{rng_state_for_seed, Checkpoint, RngState, MAGIC, VERSION};
pub use history::{format_sig, EpochRecord, TrainHistory, HISTORY_HEADER};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::{softmax_ce_sample, RegConfig};
use crate::nn::{LayerSpec, ModelSpec, Network, Tensor};
use crate::optim::{epoch_batches, AdamState, Optimizer, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

/// Samples per work unit when a batch is spread over threads. Gradients are
/// summed within a chunk and then across chunks in order, so results do not
/// depend on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerConfig {
    Sgd { alpha: f64 },
    Adam { alpha: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerConfig {
    pub fn adam(alpha: f64) -> Self {
        OptimizerConfig::Adam {
            alpha,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { alpha } | OptimizerConfig::Adam { alpha, .. } => alpha,
        }
    }

    pub fn build(&self, params: &[Tensor]) -> Result<Optimizer> {
        match *self {
            OptimizerConfig::Sgd { alpha } => {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return Err(Error::Config(format!("learning rate {alpha} must be finite and >= 0")));
                }
                Ok(Optimizer::Sgd { alpha })
            }
            OptimizerConfig::Adam {
                alpha,
                beta1,
                beta2,
                epsilon,
            } => {
                let mut st = AdamState::for_params(params, alpha);
                st.beta1 = beta1;
                st.beta2 = beta2;
                st.epsilon = epsilon;
                st.validate()?;
                Ok(Optimizer::Adam(st))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStoppingConfig {
    pub enabled: bool,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStoppingConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            patience: 5,
            min_delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub reg: RegConfig,
    /// Replacement rates for the model's dropout layers, in layer order.
    /// Empty keeps the rates from the model.
    pub dropout: Vec<f64>,
    pub early_stopping: EarlyStoppingConfig,
    pub seed: u64,
    /// Worker threads for per-sample work; 0 or 1 runs on the caller.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_max: 60,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(0.001),
            reg: RegConfig::default(),
            dropout: Vec::new(),
            early_stopping: EarlyStoppingConfig::default(),
            seed: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max < 1 {
            return Err(Error::Config("epochs_max must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let es = &self.early_stopping;
        if es.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(es.min_delta >= 0.0 && es.min_delta.is_finite()) {
            return Err(Error::Config(format!("min_delta {} must be finite and >= 0", es.min_delta)));
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        self.reg.validate()
    }

    /// Stable text form used for the checkpoint digest.
    pub fn canonical_text(&self) -> String {
        format!("{self:?}")
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_text().as_bytes()).into()
    }

    /// `model` with this config's dropout rates substituted.
    pub fn apply_dropout(&self, model: &ModelSpec) -> Result<ModelSpec> {
        let mut spec = model.clone();
        if self.dropout.is_empty() {
            return Ok(spec);
        }
        let slots: Vec<&mut f64> = spec
            .layers
            .iter_mut()
            .filter_map(|l| match l {
                LayerSpec::Dropout { p } => Some(p),
                _ => None,
            })
            .collect();
        if slots.len() != self.dropout.len() {
            return Err(Error::Config(format!(
                "{} dropout rates given but the model has {} dropout layers",
                self.dropout.len(),
                slots.len()
            )));
        }
        for (slot, &p) in slots.into_iter().zip(&self.dropout) {
            *slot = p;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping on a monitored loss. An epoch improves
/// when its loss is below `best - min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    epochs: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Result<Self> {
        if patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs: 0,
            stale: 0,
        })
    }

    /// Records the next epoch's loss. Returns whether this epoch is the new
    /// best, and whether to stop.
    pub fn update(&mut self, val_loss: f64) -> (bool, StopDecision) {
        self.epochs += 1;
        let improved = val_loss < self.best - self.min_delta || (self.best_epoch == 0 && !val_loss.is_nan());
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epochs;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let decision = if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        };
        (improved, decision)
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// 1-based; 0 before any improvement.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Infer-phase pass over `data`. Ties in the output go to the lowest class.
pub fn evaluate_model(net: &Network, data: &[Sample]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let k = net.spec().class_count;
    if let Some(s) = data.iter().find(|s| s.label >= k) {
        return Err(Error::Data(format!(
            "sample {}: label {} out of range for {k} classes",
            s.source_id, s.label
        )));
    }
    let per: Vec<(f64, usize)> = data
        .par_iter()
        .map(|s| {
            let logits = net.logits(&s.image)?;
            let (loss, _) = softmax_ce_sample(&logits, s.label, 1.0)?;
            Ok((loss, logits.argmax()))
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let predictions: Vec<usize> = per.into_iter().map(|p| p.1).collect();
    let correct = predictions.iter().zip(data).filter(|(p, s)| **p == s.label).count();
    Ok(Evaluation {
        loss,
        accuracy: correct as f64 / n,
        predictions,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch.
    pub network: Network,
    pub history: TrainHistory,
    pub best: Checkpoint,
}

/// Runs `f` on a pool of `threads` workers; 0 or 1 means the calling thread.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

pub fn train(model: &ModelSpec, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, cfg, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    model: &ModelSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord) + Send,
) -> Result<TrainOutcome> {
    with_threads(cfg.threads, || run_training(model, train_set, val_set, cfg, on_epoch))?
}

fn check_dataset(name: &str, data: &[Sample], spec: &ModelSpec) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{name} set is empty")));
    }
    for s in data {
        if s.label >= spec.class_count {
            return Err(Error::Data(format!(
                "{name} sample {}: label {} out of range for {} classes",
                s.source_id, s.label, spec.class_count
            )));
        }
        if s.image.shape() != spec.input_shape {
            return Err(Error::Shape(format!(
                "{name} sample {}: image {:?} but the model takes {:?}",
                s.source_id,
                s.image.shape(),
                spec.input_shape
            )));
        }
    }
    Ok(())
}

struct BatchSums {
    loss: f64,
    correct: usize,
    grads: Vec<Tensor>,
}

fn batch_gradients(net: &Network, data: &[Sample], idx: &[usize], seeds: &[u64]) -> Result<BatchSums> {
    let scale = 1.0 / idx.len() as f64;
    let chunks: Vec<BatchSums> = idx
        .par_chunks(CHUNK)
        .zip(seeds.par_chunks(CHUNK))
        .map(|(ids, sds)| {
            let mut acc: Option<BatchSums> = None;
            for (&i, &seed) in ids.iter().zip(sds) {
                let s = &data[i];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (logits, trace) = net.forward_train(&s.image, &mut rng)?;
                let (loss, g) = softmax_ce_sample(&logits, s.label, scale)?;
                let grads = net.backward(&trace, &g)?;
                let correct = usize::from(logits.argmax() == s.label);
                match acc.as_mut() {
                    None => acc = Some(BatchSums { loss, correct, grads }),
                    Some(a) => {
                        a.loss += loss;
                        a.correct += correct;
                        for (x, y) in a.grads.iter_mut().zip(&grads) {
                            x.add_assign(y)?;
                        }
                    }
                }
            }
            Ok(acc.expect("chunks are non-empty"))
        })
        .collect::<Result<_>>()?;
    let mut it = chunks.into_iter();
    let mut total = it.next().expect("batch is non-empty");
    for c in it {
        total.loss += c.loss;
        total.correct += c.correct;
        for (x, y) in total.grads.iter_mut().zip(&c.grads) {
            x.add_assign(y)?;
        }
    }
    Ok(total)
}

fn run_training(
    model: &ModelSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = cfg.apply_dropout(model)?;
    spec.infer_shapes()?;
    check_dataset("training", train_set, &spec)?;
    check_dataset("validation", val_set, &spec)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::init(spec, &mut rng)?;
    let mut optimizer = cfg.optimizer.build(net.params())?;
    let dense = net.dense_weight_indices();
    let digest = cfg.digest();
    let mut stopper = EarlyStopping::new(cfg.early_stopping.patience, cfg.early_stopping.min_delta)?;
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;
    let n = train_set.len();

    for epoch in 1..=cfg.epochs_max {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in epoch_batches(n, cfg.batch_size, &mut rng)?.into_iter().enumerate() {
            let seeds: Vec<u64> = idx.iter().map(|_| rng.random()).collect();
            let mut sums = batch_gradients(&net, train_set, &idx, &seeds)?;
            let data_loss = sums.loss / idx.len() as f64;
            let mut reg_loss = 0.0;
            if cfg.reg.is_active() {
                let weights: Vec<&Tensor> = dense.iter().map(|&i| &net.params()[i]).collect();
                reg_loss = crate::loss::regularized_loss(data_loss, &weights, &cfg.reg).reg_loss;
                for &i in &dense {
                    let g = cfg.reg.gradient(&net.params()[i]);
                    sums.grads[i].add_assign(&g)?;
                }
            }
            let total = data_loss + reg_loss;
            if !total.is_finite() || sums.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            optimizer.step(net.params_mut(), &sums.grads)?;
            loss_sum += total * idx.len() as f64;
            correct += sums.correct;
        }
        let val = evaluate_model(&net, val_set)?;
        if !val.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        history.push(record)?;
        on_epoch(&record);
        let (improved, decision) = stopper.update(val.loss);
        if improved {
            best = Some(Checkpoint {
                spec: net.spec().clone(),
                params: net.params().to_vec(),
                optimizer: optimizer.clone(),
                epoch: epoch as u32,
                rng: RngState::capture(&rng),
                config_digest: digest,
            });
        }
        if cfg.early_stopping.enabled && decision == StopDecision::Stop {
            break;
        }
    }
    let best = best.expect("the first finite epoch is always an improvement");
    Ok(TrainOutcome {
        network: best.network()?,
        history,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(losses: &[f64], patience: usize, min_delta: f64) -> (usize, usize) {
        let mut es = EarlyStopping::new(patience, min_delta).unwrap();
        for (i, &l) in losses.iter().enumerate() {
            if es.update(l).1 == StopDecision::Stop {
                return (i + 1, es.best_epoch());
            }
        }
        (0, es.best_epoch())
    }

    #[test]
    fn early_stopping_fixtures() {
        assert_eq!(run(&[1.0, 0.9, 0.95, 0.96, 0.97], 3, 0.0), (5, 2));
        assert_eq!(run(&[5.0, 4.0, 3.0, 2.0, 1.0, 0.5], 1, 0.0), (0, 6));
        assert_eq!(run(&[1.0, 1.0], 1, 0.0), (2, 1));
        assert_eq!(run(&[1.0, 0.95, 0.9], 2, 0.1), (3, 1));
        assert!(EarlyStopping::new(0, 0.0).is_err());
    }

    #[test]
    fn dropout_override_count_checked() {
        let spec = ModelSpec::from_layer_text([1, 4, 4], 2, "flatten,dropout(0.5),dense(2),softmax").unwrap();
        let cfg = TrainConfig {
            dropout: vec![0.1],
            ..TrainConfig::default()
        };
        let out = cfg.apply_dropout(&spec).unwrap();
        assert!(matches!(out.layers[1], LayerSpec::Dropout { p } if p == 0.1));
        let cfg = TrainConfig {
            dropout: vec![0.1, 0.2],
            ..TrainConfig::default()
        };
        assert!(cfg.apply_dropout(&spec).is_err());
    }

    #[test]
    fn digest_tracks_config() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..a.clone() };
        assert_eq!(a.digest(), TrainConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
