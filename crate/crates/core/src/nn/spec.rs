//! Declarative network description, shape inference and parameter counting.
//!
//! A [`ModelSpec`] also has a canonical line-based text form (the `[model]`
//! section syntax) used by the config parser and embedded in checkpoints:
//!
//! ```text
//! input = 1,32,32
//! classes = 4
//! layers = conv(8,3,same), relu, pool(2,max), flatten, dense(4), softmax
//! ```

use std::fmt;

use super::ops::{conv_extent, pool_extent, Padding, PoolMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: Padding,
    },
    Activation(Activation),
    Pool2d {
        window: usize,
        mode: PoolMode,
    },
    Dropout {
        p: f64,
    },
    Flatten,
    Dense {
        in_units: usize,
        out_units: usize,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::Pool2d { mode: PoolMode::Max, .. } => "maxpooling2d",
            LayerSpec::Pool2d { mode: PoolMode::Mean, .. } => "meanpooling2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Shapes of this layer's parameter tensors, weights first.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel_size, kernel_size],
                vec![out_channels],
            ],
            LayerSpec::Dense { in_units, out_units } => vec![vec![out_units, in_units], vec![out_units]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::Config("conv channel counts must be positive".into()));
                }
                if kernel_size == 0 || stride == 0 {
                    return Err(Error::Config("conv kernel_size and stride must be >= 1".into()));
                }
            }
            LayerSpec::Pool2d { window, .. } if window == 0 => {
                return Err(Error::Config("pool window must be >= 1".into()));
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
            }
            LayerSpec::Dense { in_units, out_units } if in_units == 0 || out_units == 0 => {
                return Err(Error::Config("dense unit counts must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for `input`, or a shape error naming layer `index`.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: String| Error::Shape(format!("layer {index} ({self}): {why}"));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let [c, h, w] = *input else {
                    return Err(bad(format!("expects [C,H,W] input, got {input:?}")));
                };
                if c != in_channels {
                    return Err(bad(format!("expects {in_channels} channels, got {input:?}")));
                }
                let ho = conv_extent(h, kernel_size, stride, padding);
                let wo = conv_extent(w, kernel_size, stride, padding);
                match (ho, wo) {
                    (Some((ho, _)), Some((wo, _))) => Ok(vec![out_channels, ho, wo]),
                    _ => Err(bad(format!("input {input:?} smaller than the kernel"))),
                }
            }
            LayerSpec::Pool2d { window, .. } => {
                let [c, h, w] = *input else {
                    return Err(bad(format!("expects [C,H,W] input, got {input:?}")));
                };
                match (pool_extent(h, window), pool_extent(w, window)) {
                    (Some(ho), Some(wo)) => Ok(vec![c, ho, wo]),
                    _ => Err(bad(format!("input {input:?} smaller than the window"))),
                }
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { in_units, out_units } => {
                if input != [in_units] {
                    return Err(bad(format!("expects [{in_units}] input, got {input:?}")));
                }
                Ok(vec![out_units])
            }
            LayerSpec::Activation(_) | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_size,
                stride,
                padding,
                ..
            } => {
                let pad = match padding {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                };
                if stride == 1 {
                    write!(f, "conv({out_channels},{kernel_size},{pad})")
                } else {
                    write!(f, "conv({out_channels},{kernel_size},{pad},{stride})")
                }
            }
            LayerSpec::Activation(Activation::Relu) => f.write_str("relu"),
            LayerSpec::Activation(Activation::Softmax) => f.write_str("softmax"),
            LayerSpec::Pool2d { window, mode } => {
                let mode = match mode {
                    PoolMode::Max => "max",
                    PoolMode::Mean => "mean",
                };
                write!(f, "pool({window},{mode})")
            }
            LayerSpec::Dropout { p } => write!(f, "dropout({p})"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { out_units, .. } => write!(f, "dense({out_units})"),
        }
    }
}

/// Global pixel standardization applied to every input image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
    pub input_stats: Option<InputStats>,
}

impl ModelSpec {
    /// Validates every layer and the final class count.
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>, class_count: usize) -> Result<Self> {
        let spec = Self {
            input_shape,
            layers,
            class_count,
            input_stats: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        if self.class_count == 0 {
            return Err(Error::Config("class count must be >= 1".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        let shapes = self.infer_shapes()?;
        let last = shapes.last().expect("input shape always present");
        let n: usize = last.iter().product();
        if n != self.class_count {
            return Err(Error::Shape(format!(
                "final output {last:?} has {n} elements but the model has {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    /// Input shape followed by the output shape of every layer.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn count_params(&self) -> Result<ParamCounts> {
        self.infer_shapes()?;
        let per_layer: Vec<usize> = self.layers.iter().map(LayerSpec::param_count).collect();
        let total = per_layer.iter().sum();
        Ok(ParamCounts { per_layer, total })
    }

    /// Builds a spec from the layer-list syntax, inferring input channel and
    /// unit counts from the running shape.
    pub fn from_layer_text(input_shape: [usize; 3], class_count: usize, text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        for (i, item) in split_top_level(text).into_iter().enumerate() {
            let layer = parse_layer(&item, &shape)?;
            shape = layer.output_shape(i, &shape)?;
            layers.push(layer);
        }
        Self::new(input_shape, layers, class_count)
    }

    pub fn layer_text(&self) -> String {
        self.layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Canonical `key = value` text; parsed back by [`ModelSpec::parse_text`].
    pub fn to_text(&self) -> String {
        let [c, h, w] = self.input_shape;
        let mut s = format!(
            "input = {c},{h},{w}\nclasses = {}\nlayers = {}\n",
            self.class_count,
            self.layer_text()
        );
        if let Some(st) = self.input_stats {
            s.push_str(&format!("normalize = {:?},{:?}\n", st.mean, st.std));
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut input = None;
        let mut classes = None;
        let mut layers = None;
        let mut stats = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key = value, got {line:?}")))?;
            let value = value.trim();
            match key.trim() {
                "input" => input = Some(parse_input_shape(value)?),
                "classes" => classes = Some(parse_usize(value, "classes")?),
                "layers" => layers = Some(value.to_string()),
                "normalize" => {
                    let nums = parse_f64_list(value)?;
                    let [mean, std] = nums[..] else {
                        return Err(Error::Config(format!("normalize needs mean,std, got {value:?}")));
                    };
                    stats = Some(InputStats { mean, std });
                }
                other => return Err(Error::Config(format!("unknown model key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("model text lacks {k:?}"));
        let mut spec = Self::from_layer_text(
            input.ok_or_else(|| missing("input"))?,
            classes.ok_or_else(|| missing("classes"))?,
            &layers.ok_or_else(|| missing("layers"))?,
        )?;
        spec.input_stats = stats;
        Ok(spec)
    }

    /// Parameter-tensor index range of each layer within the flat list.
    pub fn param_offsets(&self) -> Vec<std::ops::Range<usize>> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|l| {
                let n = l.param_shapes().len();
                let r = next..next + n;
                next += n;
                r
            })
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(LayerSpec::param_shapes).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub per_layer: Vec<usize>,
    pub total: usize,
}

pub fn parse_input_shape(value: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_usize(p.trim(), "input"))
        .collect::<Result<_>>()?;
    match parts[..] {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Config(format!("input must be C,H,W, got {value:?}"))),
    }
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{what}: expected a non-negative integer, got {s:?}")))
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("expected a number, got {p:?}")))
        })
        .collect()
}

/// Splits on commas that are not inside parentheses.
pub fn split_top_level(text: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth -= 1;
                cur.push(ch);
            }
            ',' if depth == 0 => {
                items.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(ch),
        }
    }
    if !cur.trim().is_empty() || !items.is_empty() {
        items.push(cur.trim().to_string());
    }
    items
}

fn parse_layer(item: &str, input: &[usize]) -> Result<LayerSpec> {
    let (name, args) = match item.find('(') {
        Some(open) => {
            if !item.ends_with(')') {
                return Err(Error::Config(format!("unbalanced parentheses in layer {item:?}")));
            }
            let args: Vec<&str> = item[open + 1..item.len() - 1].split(',').map(str::trim).collect();
            (item[..open].trim(), args)
        }
        None => (item.trim(), Vec::new()),
    };
    let arity = |n: std::ops::RangeInclusive<usize>| -> Result<()> {
        if n.contains(&args.len()) && !(args.len() == 1 && args[0].is_empty() && *n.start() > 0) {
            Ok(())
        } else {
            Err(Error::Config(format!("layer {item:?}: wrong number of arguments")))
        }
    };
    let num = |i: usize| parse_usize(args[i], item);
    match name {
        "conv" => {
            arity(3..=4)?;
            let padding = match args[2] {
                "same" => Padding::Same,
                "valid" => Padding::Valid,
                other => return Err(Error::Config(format!("unknown padding {other:?} in {item:?}"))),
            };
            let in_channels = match *input {
                [c, _, _] => c,
                _ => return Err(Error::Shape(format!("{item} needs a [C,H,W] input, got {input:?}"))),
            };
            Ok(LayerSpec::Conv2d {
                in_channels,
                out_channels: num(0)?,
                kernel_size: num(1)?,
                stride: if args.len() == 4 { num(3)? } else { 1 },
                padding,
            })
        }
        "relu" => {
            arity(0..=0)?;
            Ok(LayerSpec::Activation(Activation::Relu))
        }
        "softmax" => {
            arity(0..=0)?;
            Ok(LayerSpec::Activation(Activation::Softmax))
        }
        "pool" => {
            arity(1..=2)?;
            let mode = match args.get(1).copied().unwrap_or("max") {
                "max" => PoolMode::Max,
                "mean" => PoolMode::Mean,
                other => return Err(Error::Config(format!("unknown pool mode {other:?} in {item:?}"))),
            };
            Ok(LayerSpec::Pool2d { window: num(0)?, mode })
        }
        "dropout" => {
            arity(1..=1)?;
            let p = args[0]
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad dropout probability in {item:?}")))?;
            Ok(LayerSpec::Dropout { p })
        }
        "flatten" => {
            arity(0..=0)?;
            Ok(LayerSpec::Flatten)
        }
        "dense" => {
            arity(1..=1)?;
            let in_units = match *input {
                [n] => n,
                _ => return Err(Error::Shape(format!("{item} needs a flat input, got {input:?}"))),
            };
            Ok(LayerSpec::Dense {
                in_units,
                out_units: num(0)?,
            })
        }
        "" => Err(Error::Config("empty layer entry".into())),
        other => Err(Error::Config(format!(
            "unknown layer {other:?} (expected conv, relu, pool, dropout, flatten, dense, softmax)"
        ))),
    }
}

/// The 128x128 four-class architecture used as the reference layout.
pub const REFERENCE_LAYERS: &str = "conv(32,3,same), relu, conv(32,3,valid), relu, pool(2,max), \
     conv(64,3,valid), relu, pool(2,max), conv(64,3,valid), relu, pool(2,max), dropout(0), \
     flatten, dense(64), relu, dropout(0.1), dense(4), softmax";

pub fn reference_model() -> ModelSpec {
    ModelSpec::from_layer_text([1, 128, 128], 4, REFERENCE_LAYERS).expect("reference model is valid")
}
