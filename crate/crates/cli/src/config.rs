//! The run-config dialect.
//!
//! ```text
//! # comment
//! [data]
//! manifest = images/manifest.csv
//! side = 32
//!
//! [params]
//! units = 64
//!
//! [model]
//! layers = conv(16,3,same), relu, pool(2,max), flatten, dense($units), relu, dense(4), softmax
//!
//! [tune]
//! budget = 15
//! train.learning_rate = log(1e-4, 1e-2)
//! params.units = choice(32, 64, 128)
//! ```
//!
//! Sections are `data`, `model`, `train`, `tune`, `output` and `params`.
//! `#` starts a comment anywhere on a line. A repeated key keeps its last
//! value and records a warning. `$name` in any value outside `[params]` is
//! replaced by the `[params]` entry of that name. Relative paths resolve
//! against the directory holding the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cnf_core::bayesopt::{KernelKind, ParamValue, SearchSpace, SpecEntry};
use cnf_core::data::AugmentConfig;
use cnf_core::error::ParseError;
use cnf_core::nn::Padding;
use cnf_core::{Error, Result};

pub const SECTIONS: [&str; 6] = ["data", "model", "train", "tune", "output", "params"];

pub const DATA_KEYS: &[&str] = &[
    "manifest",
    "train_manifest",
    "val_manifest",
    "synth_n",
    "synth_seed",
    "synth_dir",
    "side",
    "split",
    "stratified",
    "seed",
    "normalize",
    "augment",
    "multiplier",
    "hflip",
    "vflip",
    "crop",
    "stretch",
    "shear",
];
pub const MODEL_KEYS: &[&str] = &[
    "layers",
    "classes",
    "conv_layers",
    "conv_filters",
    "conv_kernel",
    "conv_padding",
    "dense_layers",
    "dense_units",
    "dropout",
];
pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "optimizer",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "lambda_l1",
    "lambda_l2",
    "epsilon_l1",
    "dropout",
    "early_stopping",
    "patience",
    "min_delta",
    "seed",
];
pub const TUNE_KEYS: &[&str] = &["budget", "init", "epochs", "kernel", "noise_floor", "seed"];
pub const OUTPUT_KEYS: &[&str] = &["dir"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based source line; 0 for entries set programmatically.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<Entry>,
}

/// Raw sections in file order, before any typing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ini {
    pub sections: Vec<Section>,
    pub warnings: Vec<String>,
}

fn perr(line: usize, section: Option<&str>, key: Option<&str>, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        section: section.map(String::from),
        key: key.map(String::from),
        message: message.into(),
    }
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut ini = Ini::default();
        let mut current: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| perr(line_no, None, None, format!("malformed section header {line:?}")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(perr(
                        line_no,
                        Some(name),
                        None,
                        format!("unknown section; valid sections: {}", SECTIONS.join(", ")),
                    ));
                }
                current = Some(match ini.sections.iter().position(|s| s.name == name) {
                    Some(p) => p,
                    None => {
                        ini.sections.push(Section {
                            name: name.to_string(),
                            entries: Vec::new(),
                        });
                        ini.sections.len() - 1
                    }
                });
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                let section = current.map(|c| ini.sections[c].name.as_str());
                return Err(perr(line_no, section, None, format!("expected `key = value`, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(c) = current else {
                return Err(perr(line_no, None, Some(key), "key appears before any [section] header"));
            };
            let section = &mut ini.sections[c];
            if key.is_empty() {
                return Err(perr(line_no, Some(&section.name), None, "empty key"));
            }
            let entry = Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: line_no,
            };
            match section.entries.iter_mut().find(|e| e.key == key) {
                Some(prev) => {
                    ini.warnings.push(format!(
                        "line {line_no}: [{}] {key} repeats line {}; the later value wins",
                        section.name, prev.line
                    ));
                    *prev = entry;
                }
                None => section.entries.push(entry),
            }
        }
        Ok(ini)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.section(section)?.entries.iter().find(|e| e.key == key)
    }

    /// Sets or replaces one entry, creating the section if needed.
    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        let idx = match self.sections.iter().position(|s| s.name == section) {
            Some(i) => i,
            None => {
                self.sections.push(Section {
                    name: section.to_string(),
                    entries: Vec::new(),
                });
                self.sections.len() - 1
            }
        };
        let entries = &mut self.sections[idx].entries;
        match entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value.to_string(),
            None => entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: 0,
            }),
        }
    }

    /// Canonical text; parses back to the same sections and values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", s.name);
            for e in &s.entries {
                let _ = writeln!(out, "{} = {}", e.key, e.value);
            }
        }
        out
    }
}

/// Replaces `$name` references with `[params]` values.
fn substitute(value: &str, params: &[Entry], section: &str, entry: &Entry) -> Result<String, ParseError> {
    let mut out = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 1..];
        let end = tail
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(tail.len());
        let name = &tail[..end];
        if name.is_empty() {
            return Err(perr(entry.line, Some(section), Some(&entry.key), "`$` must be followed by a parameter name"));
        }
        let p = params.iter().find(|p| p.key == name).ok_or_else(|| {
            let known: Vec<&str> = params.iter().map(|p| p.key.as_str()).collect();
            perr(
                entry.line,
                Some(section),
                Some(&entry.key),
                format!("unknown parameter ${name}; [params] defines: {}", known.join(", ")),
            )
        })?;
        out.push_str(&p.value);
        rest = &tail[end..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Typed access to one section with unknown-key detection.
struct Fields {
    section: &'static str,
    entries: Vec<Entry>,
}

impl Fields {
    fn new(ini: &Ini, section: &'static str, valid: &[&str], dotted_ok: bool) -> Result<Self, ParseError> {
        let params: Vec<Entry> = ini.section("params").map(|s| s.entries.clone()).unwrap_or_default();
        let mut entries = Vec::new();
        for e in ini.section(section).map(|s| s.entries.as_slice()).unwrap_or_default() {
            if !valid.contains(&e.key.as_str()) && !(dotted_ok && e.key.contains('.')) {
                return Err(perr(
                    e.line,
                    Some(section),
                    Some(&e.key),
                    format!("unknown key; valid keys: {}", valid.join(", ")),
                ));
            }
            entries.push(Entry {
                value: substitute(&e.value, &params, section, e)?,
                ..e.clone()
            });
        }
        Ok(Self { section, entries })
    }

    fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn err(&self, e: &Entry, message: impl Into<String>) -> ParseError {
        perr(e.line, Some(self.section), Some(&e.key), message)
    }

    fn parsed<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ParseError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .ok_or_else(|| self.err(e, format!("expected {what}, got {:?}", e.value))),
        }
    }

    fn num<T: FromStr>(&self, key: &str, default: T) -> Result<T, ParseError> {
        Ok(self.parsed(key, "a number", |v| v.parse().ok())?.unwrap_or(default))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ParseError> {
        Ok(self.parsed(key, "true or false", parse_bool)?.unwrap_or(default))
    }

    fn text(&self, key: &str) -> Option<String> {
        self.entry(key).map(|e| e.value.clone())
    }

    /// `lo,hi`, or `none` to disable.
    fn range(&self, key: &str, default: Option<(f64, f64)>) -> Result<Option<(f64, f64)>, ParseError> {
        Ok(self
            .parsed(key, "`lo,hi` or `none`", |v| {
                if v.eq_ignore_ascii_case("none") {
                    return Some(None);
                }
                let nums = parse_floats(v)?;
                match nums[..] {
                    [lo, hi] => Some(Some((lo, hi))),
                    _ => None,
                }
            })?
            .unwrap_or(default))
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

fn parse_floats(v: &str) -> Option<Vec<f64>> {
    v.split(',').map(|p| p.trim().parse().ok()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// One manifest, split into train and validation.
    Manifest(PathBuf),
    /// Already split.
    Split { train: PathBuf, val: PathBuf },
    /// Synthetic shapes generated into `dir`.
    Synth { n_per_class: usize, seed: u64, dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub side: usize,
    pub split: f64,
    pub stratified: bool,
    pub seed: u64,
    pub normalize: bool,
    /// `None` when augmentation is off.
    pub augment: Option<AugmentConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerPlan {
    /// Explicit layer list.
    Text(String),
    /// The reference architecture with the output layer sized to the classes.
    Reference,
    /// Conv blocks (conv, relu, 2x2 max pool) then dense blocks (dense,
    /// relu, dropout) and a softmax output.
    Template {
        conv_layers: usize,
        conv_filters: usize,
        conv_kernel: usize,
        conv_padding: Padding,
        dense_layers: usize,
        dense_units: usize,
        dropout: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub plan: LayerPlan,
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub epsilon_l1: f64,
    /// One rate per dropout layer, or a single rate for all of them.
    pub dropout: Vec<f64>,
    pub early_stopping: bool,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSection {
    pub budget: usize,
    pub init: Option<usize>,
    /// Epoch cap for each trial's short training run.
    pub epochs: usize,
    pub kernel: KernelKind,
    pub noise_floor: f64,
    pub seed: u64,
    /// Dimension and fixed names are `section.key`.
    pub space: SearchSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub tune: TuneSection,
    pub output_dir: PathBuf,
    /// Source sections, kept for overrides and for writing tuned configs.
    pub ini: Ini,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::parse(&text, &base)?)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ParseError> {
        Self::from_ini(Ini::parse(text)?, base_dir)
    }

    pub fn from_ini(ini: Ini, base_dir: &Path) -> Result<Self, ParseError> {
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let out = Fields::new(&ini, "output", OUTPUT_KEYS, false)?;
        let output_dir = resolve(out.text("dir").unwrap_or_else(|| "out".into()));

        let d = Fields::new(&ini, "data", DATA_KEYS, false)?;
        let source = match (d.text("manifest"), d.text("train_manifest"), d.text("val_manifest")) {
            (Some(m), None, None) => DataSource::Manifest(resolve(m)),
            (None, Some(t), Some(v)) => DataSource::Split {
                train: resolve(t),
                val: resolve(v),
            },
            (None, None, None) => DataSource::Synth {
                n_per_class: d.num("synth_n", 200)?,
                seed: d.num("synth_seed", 0)?,
                dir: d.text("synth_dir").map_or_else(|| output_dir.join("synth"), resolve),
            },
            _ => {
                let e = d
                    .entry("manifest")
                    .or_else(|| d.entry("train_manifest"))
                    .or_else(|| d.entry("val_manifest"))
                    .expect("some manifest key is set");
                return Err(d.err(
                    e,
                    "give either `manifest`, or both `train_manifest` and `val_manifest`",
                ));
            }
        };
        let defaults = AugmentConfig::default();
        let augment = if d.flag("augment", false)? {
            Some(AugmentConfig {
                hflip: d.flag("hflip", defaults.hflip)?,
                vflip: d.flag("vflip", defaults.vflip)?,
                crop: d.range("crop", defaults.crop)?,
                scale: d.range("stretch", defaults.scale)?,
                shear_deg: d.range("shear", defaults.shear_deg)?,
                multiplier: d.num("multiplier", defaults.multiplier)?,
            })
        } else {
            None
        };
        let data = DataConfig {
            source,
            side: d.num("side", 32)?,
            split: d.num("split", 0.8)?,
            stratified: d.flag("stratified", true)?,
            seed: d.num("seed", 0)?,
            normalize: d.flag("normalize", true)?,
            augment,
        };
        if let (Some(a), Some(e)) = (&data.augment, d.entry("augment")) {
            a.validate().map_err(|err| d.err(e, err.to_string()))?;
        }

        let m = Fields::new(&ini, "model", MODEL_KEYS, false)?;
        let plan = match m.text("layers") {
            Some(t) if t.eq_ignore_ascii_case("reference") => LayerPlan::Reference,
            Some(t) => LayerPlan::Text(t),
            None => LayerPlan::Template {
                conv_layers: m.num("conv_layers", 2)?,
                conv_filters: m.num("conv_filters", 16)?,
                conv_kernel: m.num("conv_kernel", 3)?,
                conv_padding: m
                    .parsed("conv_padding", "`same` or `valid`", |v| match v {
                        "same" => Some(Padding::Same),
                        "valid" => Some(Padding::Valid),
                        _ => None,
                    })?
                    .unwrap_or(Padding::Same),
                dense_layers: m.num("dense_layers", 1)?,
                dense_units: m.num("dense_units", 64)?,
                dropout: m.num("dropout", 0.25)?,
            },
        };
        if matches!(plan, LayerPlan::Text(_) | LayerPlan::Reference) {
            for k in &MODEL_KEYS[2..] {
                if let Some(e) = m.entry(k) {
                    return Err(m.err(e, "template keys cannot be combined with `layers`"));
                }
            }
        }
        let model = ModelConfig {
            plan,
            classes: m.parsed("classes", "a class count", |v| v.parse().ok())?,
        };

        let t = Fields::new(&ini, "train", TRAIN_KEYS, false)?;
        let train = TrainSection {
            epochs: t.num("epochs", 60)?,
            batch_size: t.num("batch_size", 32)?,
            adam: t
                .parsed("optimizer", "`adam` or `sgd`", |v| match v.to_ascii_lowercase().as_str() {
                    "adam" => Some(true),
                    "sgd" => Some(false),
                    _ => None,
                })?
                .unwrap_or(true),
            learning_rate: t.num("learning_rate", 0.001)?,
            beta1: t.num("beta1", 0.9)?,
            beta2: t.num("beta2", 0.999)?,
            epsilon: t.num("epsilon", 1e-8)?,
            lambda_l1: t.num("lambda_l1", 0.0)?,
            lambda_l2: t.num("lambda_l2", 0.0)?,
            epsilon_l1: t.num("epsilon_l1", 1e-8)?,
            dropout: t.parsed("dropout", "a comma-separated list of rates", parse_floats)?.unwrap_or_default(),
            early_stopping: t.flag("early_stopping", true)?,
            patience: t.num("patience", 5)?,
            min_delta: t.num("min_delta", 0.0)?,
            seed: t.num("seed", 0)?,
        };

        let u = Fields::new(&ini, "tune", TUNE_KEYS, true)?;
        let mut space = SearchSpace::default();
        for e in u.entries.iter().filter(|e| e.key.contains('.')) {
            let (sec, key) = e.key.split_once('.').expect("dotted");
            let valid: &[&str] = match sec {
                "model" => MODEL_KEYS,
                "train" => TRAIN_KEYS,
                "params" => &[],
                _ => return Err(u.err(e, "only [model], [train] and [params] keys can be tuned")),
            };
            if sec == "params" {
                if ini.get("params", key).is_none() {
                    return Err(u.err(e, format!("[params] has no entry {key:?}")));
                }
            } else if !valid.contains(&key) {
                return Err(u.err(e, format!("[{sec}] has no key {key:?}; valid keys: {}", valid.join(", "))));
            }
            match SearchSpace::parse_entry(&e.value).map_err(|err| u.err(e, err.to_string()))? {
                SpecEntry::Dim(dim) => space.dims.push((e.key.clone(), dim)),
                SpecEntry::Fixed(v) => space.fixed.push((e.key.clone(), v)),
            }
        }
        let tune = TuneSection {
            budget: u.num("budget", 30)?,
            init: u.parsed("init", "a trial count", |v| v.parse().ok())?,
            epochs: u.num("epochs", 3)?,
            kernel: u
                .parsed("kernel", "`matern52` or `se`", |v| KernelKind::parse(v).ok())?
                .unwrap_or_default(),
            noise_floor: u.num("noise_floor", 1e-6)?,
            seed: u.num("seed", 0)?,
            space,
        };

        Ok(Self {
            data,
            model,
            train,
            tune,
            output_dir,
            ini,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// This config with tuned values written into their sections.
    pub fn with_overrides(&self, values: &[(String, ParamValue)]) -> Result<Self> {
        let mut ini = self.ini.clone();
        for (name, v) in values {
            let (sec, key) = name
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("tuned name {name:?} is not section.key")))?;
            ini.set(sec, key, &v.to_string());
        }
        Ok(Self::from_ini(ini, &self.base_dir)?)
    }

    /// Source sections with every path made absolute, so the text can be
    /// saved anywhere and still refer to the same files.
    pub fn portable_ini(&self) -> Ini {
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string();
        let mut ini = self.ini.clone();
        ini.set("output", "dir", &abs(&self.output_dir));
        match &self.data.source {
            DataSource::Manifest(p) => ini.set("data", "manifest", &abs(p)),
            DataSource::Split { train, val } => {
                ini.set("data", "train_manifest", &abs(train));
                ini.set("data", "val_manifest", &abs(val));
            }
            DataSource::Synth { dir, .. } => ini.set("data", "synth_dir", &abs(dir)),
        }
        ini
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ParseError> {
        RunConfig::parse(text, Path::new("/cfg"))
    }

    #[test]
    fn empty_config_has_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.output_dir, Path::new("/cfg/out"));
        assert_eq!(
            c.data.source,
            DataSource::Synth {
                n_per_class: 200,
                seed: 0,
                dir: PathBuf::from("/cfg/out/synth")
            }
        );
        assert_eq!(c.data.side, 32);
        assert_eq!(c.data.split, 0.8);
        assert!(c.data.stratified && c.data.normalize);
        assert_eq!(c.data.augment, None);
        assert_eq!(c.train.epochs, 60);
        assert_eq!(c.train.batch_size, 32);
        assert!(c.train.adam);
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.train.patience, 5);
        assert_eq!(c.tune.budget, 30);
        assert_eq!(c.tune.epochs, 3);
        assert_eq!(c.tune.kernel, KernelKind::Matern52);
        assert!(matches!(c.model.plan, LayerPlan::Template { conv_layers: 2, dense_layers: 1, .. }));
    }

    #[test]
    fn comments_and_duplicates() {
        let c = parse("# top\n[train]\nepochs = 5 # inline\nepochs = 7\n").unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.ini.warnings.len(), 1);
        assert!(c.ini.warnings[0].contains("line 4"), "{}", c.ini.warnings[0]);
    }

    #[test]
    fn errors_name_line_section_and_key() {
        let e = parse("[train]\n\nepochz = 5\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(e.section.as_deref(), Some("train"));
        assert_eq!(e.key.as_deref(), Some("epochz"));
        assert!(e.message.contains("batch_size"), "{e}");

        let e = parse("[train]\nepochs = five\n").unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (2, Some("epochs")));

        let e = parse("[data]\nside 32\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse("side = 32\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse("[nope]\n").unwrap_err();
        assert!(e.message.contains("valid sections"));
    }

    #[test]
    fn params_substitution() {
        let c = parse("[params]\nu = 48\n[model]\nlayers = flatten, dense($u), relu, dense(4), softmax\n").unwrap();
        assert_eq!(c.model.plan, LayerPlan::Text("flatten, dense(48), relu, dense(4), softmax".into()));
        let e = parse("[model]\nlayers = dense($missing)\n").unwrap_err();
        assert!(e.message.contains("$missing"));
    }

    #[test]
    fn tune_dimensions() {
        let c = parse(
            "[params]\nu = 64\n[tune]\nbudget = 15\ntrain.learning_rate = log(1e-4,1e-2)\n\
             params.u = choice(32,64,128)\ntrain.lambda_l2 = fixed(0.001)\n",
        )
        .unwrap();
        assert_eq!(c.tune.budget, 15);
        assert_eq!(c.tune.space.dims.len(), 2);
        assert_eq!(c.tune.space.fixed.len(), 1);
        assert!(parse("[tune]\ndata.side = int(16,32)\n").is_err());
        assert!(parse("[tune]\ntrain.nope = linear(0,1)\n").is_err());
        assert!(parse("[tune]\nparams.nope = linear(0,1)\n").is_err());
        assert!(parse("[tune]\ntrain.dropout = gauss(0,1)\n").is_err());
    }

    #[test]
    fn overrides_and_round_trip() {
        let c = parse("[train]\nepochs = 4\n[tune]\ntrain.learning_rate = log(1e-4,1e-2)\n").unwrap();
        let o = c
            .with_overrides(&[("train.learning_rate".into(), ParamValue::Float(0.0025))])
            .unwrap();
        assert_eq!(o.train.learning_rate, 0.0025);
        assert_eq!(o.train.epochs, 4);
        let back = RunConfig::parse(&o.ini.to_text(), Path::new("/cfg")).unwrap();
        assert_eq!(back.train, o.train);
        assert_eq!(back.tune, o.tune);
    }

    #[test]
    fn manifest_sources() {
        let c = parse("[data]\nmanifest = d/m.csv\n").unwrap();
        assert_eq!(c.data.source, DataSource::Manifest("/cfg/d/m.csv".into()));
        let c = parse("[data]\ntrain_manifest = /a.csv\nval_manifest = b.csv\n").unwrap();
        assert_eq!(
            c.data.source,
            DataSource::Split {
                train: "/a.csv".into(),
                val: "/cfg/b.csv".into()
            }
        );
        assert!(parse("[data]\ntrain_manifest = a.csv\n").is_err());
    }

    #[test]
    fn augmentation_keys() {
        let c = parse("[data]\naugment = true\ncrop = none\nshear = -5,5\nmultiplier = 3\n").unwrap();
        let a = c.data.augment.unwrap();
        assert_eq!(a.crop, None);
        assert_eq!(a.shear_deg, Some((-5.0, 5.0)));
        assert_eq!(a.multiplier, 3);
        let e = parse("[data]\naugment = true\nshear = -50,5\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("augment"));
    }

    #[test]
    fn layers_excludes_template_keys() {
        assert!(parse("[model]\nlayers = reference\ndense_units = 3\n").is_err());
        assert_eq!(parse("[model]\nlayers = Reference\n").unwrap().model.plan, LayerPlan::Reference);
    }
}
