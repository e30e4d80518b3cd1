//! Subcommand implementations. Each writes its human-readable output to the
//! given writer and its artifacts under the configured output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cnf_core::bayesopt::{tune, ParamValue, TuneConfig};
use cnf_core::data::{
    apply_normalization, gen_synthetic, load_samples, normalize_dataset, save_pgm, DatasetManifest, ManifestEntry,
};
use cnf_core::eval::{classification_report, skew_check, ConfusionMatrix};
use cnf_core::nn::{Activation, LayerSpec, ModelSpec, Padding, PoolMode};
use cnf_core::train::{evaluate_model, train, train_with, Checkpoint};
use cnf_core::{Error, Result};

use crate::config::RunConfig;
use crate::pipeline::{build_model, load_prepared, load_raw, train_config};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const BEST_CONFIG_FILE: &str = "best.ini";
pub const STATS_FILE: &str = "stats.txt";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const REPORT_FILE: &str = "report.csv";

/// Epsilon used for the skew check printed by `eval`.
pub const SKEW_EPSILON: f64 = 0.05;

pub type Out<'a> = &'a mut (dyn Write + Send);

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn say(out: Out<'_>, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Loads a config, reports its warnings on stderr and applies command-line
/// overrides.
pub fn load_config(path: &Path, out_dir: Option<&Path>, seed: Option<u64>, seed_key: &str) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    for w in &cfg.ini.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    let mut ini = cfg.ini.clone();
    if let Some(dir) = out_dir {
        let abs = std::path::absolute(dir).map_err(|e| io_err(dir, e))?;
        ini.set("output", "dir", &abs.display().to_string());
    }
    if let Some(s) = seed {
        let (sec, key) = seed_key.split_once('.').expect("section.key");
        ini.set(sec, key, &s.to_string());
    }
    Ok(RunConfig::from_ini(ini, &cfg.base_dir)?)
}

pub fn synth_data(out_dir: &Path, n: usize, side: usize, seed: u64, out: Out<'_>) -> Result<()> {
    let m = gen_synthetic(out_dir, n, side, seed)?;
    say(
        out,
        &format!(
            "wrote {} images ({} classes x {n}) and manifest.csv to {}\n",
            m.entries.len(),
            m.class_names.len(),
            out_dir.display()
        ),
    )
}

/// Writes split (and augmented) sets as 16-bit PGMs with one manifest per
/// set, plus the training-set normalization statistics.
pub fn prepare(cfg: &RunConfig, out: Out<'_>) -> Result<()> {
    let raw = load_raw(cfg)?;
    let root = cfg.output_dir.join("prepared");
    let mut manifests = Vec::new();
    for (name, set) in [("train", &raw.train), ("val", &raw.val)] {
        let dir = root.join(name);
        create_dir(&dir)?;
        let mut entries = Vec::with_capacity(set.len());
        for (i, s) in set.iter().enumerate() {
            let file = PathBuf::from(format!("{i:05}.pgm"));
            save_pgm(&dir.join(&file), &s.image, u16::MAX)?;
            entries.push(ManifestEntry { path: file, label: s.label });
        }
        let m = DatasetManifest {
            root: dir.clone(),
            entries,
            class_names: raw.class_names.clone(),
        };
        let path = dir.join("manifest.csv");
        m.save(&path)?;
        say(out, &format!("{name}: {} images -> {}\n", set.len(), path.display()))?;
        manifests.push(m);
    }
    if cfg.data.normalize {
        let written = load_samples(&manifests[0], None)?;
        let (_, stats) = normalize_dataset(&written)?;
        let path = root.join(STATS_FILE);
        write_file(&path, &format!("mean = {:?}\nstd = {:?}\n", stats.mean, stats.std))?;
        say(out, &format!("stats: mean {:.6} std {:.6} -> {}\n", stats.mean, stats.std, path.display()))?;
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, threads: usize, out: Out<'_>) -> Result<()> {
    let data = load_prepared(cfg)?;
    let classes = cfg.model.classes.unwrap_or(data.class_names.len());
    let model = build_model(cfg, classes, data.stats)?;
    let tc = train_config(cfg, &model, threads)?;
    create_dir(&cfg.output_dir)?;
    say(
        out,
        &format!(
            "training on {} samples, validating on {}; {} parameters\n",
            data.train.len(),
            data.val.len(),
            model.count_params()?.total
        ),
    )?;
    let outcome = train_with(&model, &data.train, &data.val, &tc, |r| {
        let _ = say(
            out,
            &format!(
                "epoch {:>3}  train loss {:.6}  acc {:.4}  val loss {:.6}  acc {:.4}  ({:.1}s)\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
            ),
        );
    })?;
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    outcome.best.save(&ckpt)?;
    let hist = cfg.output_dir.join(HISTORY_FILE);
    outcome.history.write_csv(&hist)?;
    let best = outcome
        .history
        .records
        .iter()
        .find(|r| r.epoch == outcome.best.epoch as usize)
        .expect("best epoch is in the history");
    say(
        out,
        &format!(
            "best epoch {} (val loss {:.6}, val acc {:.4}); wrote {} and {}\n",
            best.epoch,
            best.val_loss,
            best.val_acc,
            ckpt.display(),
            hist.display()
        ),
    )
}

fn assignment_text(a: &[(String, ParamValue)]) -> String {
    a.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(" ")
}

/// Minimizes short-run validation loss over the `[tune]` space, then writes
/// the winning configuration as a complete run config.
pub fn tune_cmd(cfg: &RunConfig, threads: usize, out: Out<'_>) -> Result<()> {
    let t = &cfg.tune;
    if t.space.dims.is_empty() {
        return Err(Error::Config(
            "[tune] declares no search dimensions (e.g. train.learning_rate = log(1e-4,1e-2))".into(),
        ));
    }
    let data = load_prepared(cfg)?;
    create_dir(&cfg.output_dir)?;
    let log = cfg.output_dir.join(TRIALS_FILE);
    let tcfg = TuneConfig {
        budget: t.budget,
        init: t.init,
        kernel: t.kernel,
        noise_floor: t.noise_floor,
        seed: t.seed,
        log_path: Some(log.clone()),
    };
    let result = tune(&t.space, &tcfg, |assign, trial| {
        let run = || -> Result<f64> {
            let c = cfg.with_overrides(assign)?;
            let classes = c.model.classes.unwrap_or(data.class_names.len());
            let model = build_model(&c, classes, data.stats)?;
            let mut tc = train_config(&c, &model, threads)?;
            tc.epochs_max = t.epochs;
            let outcome = train(&model, &data.train, &data.val, &tc)?;
            Ok(evaluate_model(&outcome.network, &data.val)?.loss)
        };
        let res = run();
        let line = match &res {
            Ok(loss) => format!("trial {trial:>3}  {}  val loss {loss:.6}\n", assignment_text(assign)),
            Err(e) => format!("trial {trial:>3}  {}  failed: {e}\n", assignment_text(assign)),
        };
        say(out, &line)?;
        res
    })?;
    let best = &result.best;
    let best_cfg = cfg.with_overrides(&best.config)?;
    let path = cfg.output_dir.join(BEST_CONFIG_FILE);
    let text = format!(
        "# best of {} trials: trial {}, validation loss {:?}\n{}",
        result.trials.len(),
        best.trial,
        best.loss,
        best_cfg.portable_ini().to_text()
    );
    write_file(&path, &text)?;
    say(
        out,
        &format!(
            "best trial {} ({}) val loss {:.6}; wrote {} and {}\n",
            best.trial,
            assignment_text(&best.config),
            best.loss,
            log.display(),
            path.display()
        ),
    )
}

pub fn eval_cmd(checkpoint: &Path, manifest: &Path, out_dir: Option<&Path>, out: Out<'_>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let net = ck.network()?;
    let spec = net.spec();
    let [c, h, w] = spec.input_shape;
    if c != 1 || h != w {
        return Err(Error::Data(format!(
            "model input {:?} is not a square grayscale image",
            spec.input_shape
        )));
    }
    let m = DatasetManifest::load(manifest)?;
    let mut samples = load_samples(&m, Some(h))?;
    if let Some(stats) = spec.input_stats {
        samples = apply_normalization(&samples, &stats);
    }
    let ev = evaluate_model(&net, &samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let k = spec.class_count;
    let mut cm = ConfusionMatrix::from_predictions(&labels, &ev.predictions, k)?;
    if m.class_names.len() == k {
        cm = cm.with_class_names(m.class_names.clone())?;
    }
    let report = classification_report(&cm)?;
    let skew = skew_check(&cm, SKEW_EPSILON)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
    create_dir(&dir)?;
    let cm_path = dir.join(CONFUSION_FILE);
    cm.write_csv(&cm_path)?;
    let rep_path = dir.join(REPORT_FILE);
    write_file(&rep_path, &report.to_csv())?;
    say(
        out,
        &format!(
            "{}\n{}\nloss {:.6}  accuracy {:.4}\nskew check (prior {:.4} + {}): {} (margin {:+.4})\nwrote {} and {}\n",
            report.render(),
            cm.render(),
            ev.loss,
            ev.accuracy,
            skew.prior,
            SKEW_EPSILON,
            if skew.pass { "pass" } else { "FAIL" },
            skew.margin,
            cm_path.display(),
            rep_path.display()
        ),
    )
}

fn shape_text(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(ToString::to_string).collect();
    format!("({})", parts.join(", "))
}

/// Per-layer table: kernel size, stride and padding for convolutions,
/// activation name, pool window and padding, parameter count and output
/// shape.
pub fn layer_table(spec: &ModelSpec) -> Result<String> {
    let shapes = spec.infer_shapes()?;
    let counts = spec.count_params()?;
    let header = ["Layer", "C-size", "C-stride", "C-pad", "Act", "P-size", "P-pad", "Params", "O/P shape"];
    let mut rows: Vec<[String; 9]> = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let dash = || "-".to_string();
        let (mut csize, mut cstride, mut cpad, mut act, mut psize, mut ppad) =
            (dash(), dash(), dash(), dash(), dash(), dash());
        match *layer {
            LayerSpec::Conv2d {
                kernel_size,
                stride,
                padding,
                ..
            } => {
                csize = format!("({kernel_size} x {kernel_size})");
                cstride = stride.to_string();
                cpad = match padding {
                    Padding::Valid => "valid".into(),
                    Padding::Same => "same".into(),
                };
            }
            LayerSpec::Activation(a) => {
                act = match a {
                    Activation::Relu => "ReLU".into(),
                    Activation::Softmax => "Softmax".into(),
                };
            }
            LayerSpec::Pool2d { window, mode } => {
                psize = format!("({window} x {window})");
                ppad = "0".into();
                if mode == PoolMode::Mean {
                    act = "mean".into();
                }
            }
            _ => {}
        }
        let name = match layer {
            LayerSpec::Dropout { p } => format!("dropout({p})"),
            l => l.kind_name().to_string(),
        };
        rows.push([
            name,
            csize,
            cstride,
            cpad,
            act,
            psize,
            ppad,
            counts.per_layer[i].to_string(),
            shape_text(&shapes[i + 1]),
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut s = line(&header.map(String::from));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    s.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in &rows {
        s.push_str(&line(r));
    }
    s.push_str(&format!("input {}  total params {}\n", shape_text(&shapes[0]), counts.total));
    Ok(s)
}

pub fn inspect_checkpoint(path: &Path, out: Out<'_>) -> Result<()> {
    let ck = Checkpoint::load(path)?;
    let spec = ck.spec.clone();
    say(
        out,
        &format!("checkpoint {} (epoch {})\n{}\n{}", path.display(), ck.epoch, spec.to_text(), layer_table(&spec)?),
    )
}

pub fn inspect_config(cfg: &RunConfig, out: Out<'_>) -> Result<()> {
    let classes = crate::pipeline::class_count(cfg)?;
    let spec = build_model(cfg, classes, None)?;
    say(out, &format!("{}\n{}", spec.to_text(), layer_table(&spec)?))
}
