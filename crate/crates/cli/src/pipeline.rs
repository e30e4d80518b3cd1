//! Turns a [`RunConfig`] into datasets, a model spec and a training config.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cnf_core::data::{
    augment, gen_synthetic, load_samples, normalize_dataset, apply_normalization, split_dataset, DatasetManifest,
    Sample, SYNTH_CLASSES,
};
use cnf_core::nn::spec::REFERENCE_LAYERS;
use cnf_core::nn::{InputStats, LayerSpec, ModelSpec, Padding};
use cnf_core::loss::RegConfig;
use cnf_core::train::{EarlyStoppingConfig, OptimizerConfig, TrainConfig};
use cnf_core::{Error, Result};

use crate::config::{DataSource, LayerPlan, RunConfig};

/// Train and validation samples before normalization.
#[derive(Debug, Clone)]
pub struct RawData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub class_names: Vec<String>,
    pub stats: Option<InputStats>,
}

/// Number of classes the config's data source provides.
pub fn class_count(cfg: &RunConfig) -> Result<usize> {
    if let Some(k) = cfg.model.classes {
        return Ok(k);
    }
    Ok(match &cfg.data.source {
        DataSource::Synth { .. } => SYNTH_CLASSES.len(),
        DataSource::Manifest(p) => DatasetManifest::load(p)?.class_names.len(),
        DataSource::Split { train, .. } => DatasetManifest::load(train)?.class_names.len(),
    })
}

/// Loads, splits and augments. Augmented copies are appended after the
/// original training samples.
pub fn load_raw(cfg: &RunConfig) -> Result<RawData> {
    let d = &cfg.data;
    let side = Some(d.side);
    let (mut train, val, class_names) = match &d.source {
        DataSource::Split { train, val } => {
            let tm = DatasetManifest::load(train)?;
            let vm = DatasetManifest::load(val)?;
            (load_samples(&tm, side)?, load_samples(&vm, side)?, tm.class_names)
        }
        DataSource::Manifest(path) => {
            let m = DatasetManifest::load(path)?;
            let all = load_samples(&m, side)?;
            let (t, v) = split_dataset(&all, d.split, &mut ChaCha8Rng::seed_from_u64(d.seed), d.stratified)?;
            (t, v, m.class_names)
        }
        DataSource::Synth { n_per_class, seed, dir } => {
            let m = gen_synthetic(dir, *n_per_class, d.side, *seed)?;
            let all = load_samples(&m, side)?;
            let (t, v) = split_dataset(&all, d.split, &mut ChaCha8Rng::seed_from_u64(d.seed), d.stratified)?;
            (t, v, m.class_names)
        }
    };
    if let Some(aug) = &d.augment {
        let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
        rng.set_stream(1);
        let mut extra = Vec::with_capacity(train.len() * aug.multiplier);
        for s in &train {
            extra.extend(augment(s, aug, &mut rng)?);
        }
        train.extend(extra);
    }
    Ok(RawData { train, val, class_names })
}

/// [`load_raw`] followed by normalization with training-set statistics.
pub fn load_prepared(cfg: &RunConfig) -> Result<PreparedData> {
    let raw = load_raw(cfg)?;
    if !cfg.data.normalize {
        return Ok(PreparedData {
            train: raw.train,
            val: raw.val,
            class_names: raw.class_names,
            stats: None,
        });
    }
    let (train, stats) = normalize_dataset(&raw.train)?;
    let val = apply_normalization(&raw.val, &stats);
    Ok(PreparedData {
        train,
        val,
        class_names: raw.class_names,
        stats: Some(stats),
    })
}

fn template_layers(plan: &LayerPlan, classes: usize) -> String {
    let LayerPlan::Template {
        conv_layers,
        conv_filters,
        conv_kernel,
        conv_padding,
        dense_layers,
        dense_units,
        dropout,
    } = *plan
    else {
        unreachable!("template plan expected");
    };
    let pad = match conv_padding {
        Padding::Same => "same",
        Padding::Valid => "valid",
    };
    let mut items = Vec::new();
    for _ in 0..conv_layers {
        items.push(format!("conv({conv_filters},{conv_kernel},{pad})"));
        items.push("relu".into());
        items.push("pool(2,max)".into());
    }
    items.push("flatten".into());
    for _ in 0..dense_layers {
        items.push(format!("dense({dense_units})"));
        items.push("relu".into());
        items.push(format!("dropout({dropout})"));
    }
    items.push(format!("dense({classes})"));
    items.push("softmax".into());
    items.join(", ")
}

/// The layer list a config describes, in layer-list syntax.
pub fn layer_text(cfg: &RunConfig, classes: usize) -> String {
    match &cfg.model.plan {
        LayerPlan::Text(t) => t.clone(),
        LayerPlan::Reference => REFERENCE_LAYERS.replace("dense(4), softmax", &format!("dense({classes}), softmax")),
        plan => template_layers(plan, classes),
    }
}

pub fn build_model(cfg: &RunConfig, classes: usize, stats: Option<InputStats>) -> Result<ModelSpec> {
    let side = cfg.data.side;
    let mut spec = ModelSpec::from_layer_text([1, side, side], classes, &layer_text(cfg, classes))?;
    spec.input_stats = stats;
    Ok(spec)
}

/// Core training config for `model`. A single `dropout` rate applies to
/// every dropout layer.
pub fn train_config(cfg: &RunConfig, model: &ModelSpec, threads: usize) -> Result<TrainConfig> {
    let t = &cfg.train;
    let slots = model
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Dropout { .. }))
        .count();
    let dropout = match t.dropout.len() {
        1 if slots != 1 => vec![t.dropout[0]; slots],
        _ => t.dropout.clone(),
    };
    let optimizer = if t.adam {
        OptimizerConfig::Adam {
            alpha: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    } else {
        OptimizerConfig::Sgd { alpha: t.learning_rate }
    };
    let reg = RegConfig {
        lambda_l1: t.lambda_l1,
        lambda_l2: t.lambda_l2,
        epsilon_l1: t.epsilon_l1,
    };
    reg.validate()?;
    let tc = TrainConfig {
        epochs_max: t.epochs,
        batch_size: t.batch_size,
        optimizer,
        reg,
        dropout,
        early_stopping: EarlyStoppingConfig {
            enabled: t.early_stopping,
            patience: t.patience,
            min_delta: t.min_delta,
        },
        seed: t.seed,
        threads,
    };
    tc.validate()?;
    Ok(tc)
}

/// Worker threads from `CNF_THREADS`; unset or 0 means single-threaded.
pub fn env_threads() -> Result<usize> {
    match std::env::var("CNF_THREADS") {
        Err(_) => Ok(0),
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("CNF_THREADS must be a non-negative integer, got {v:?}"))),
    }
}
