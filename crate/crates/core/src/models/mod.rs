//! Declarative specs of the classifier, DCGAN and ACGAN networks, and the
//! parameter sets that instantiate them.
//!
//! A [`ModelSpec`] is a body (a layer chain) followed by zero or more heads
//! (each a layer chain applied to the body output). Specs are shape-checked
//! on construction and serialize to a canonical JSON form whose SHA-256 is
//! the model-spec hash recorded next to checkpoints.

mod build;
mod network;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::sha256_hex;

pub use build::{
    build_acgan_discriminator, build_acgan_generator, build_classifier, build_dcgan_discriminator,
    build_dcgan_generator, ClassifierArch, GanArch,
};
pub use network::{sidecar_path, Forward, Mode, Model, ModelMeta, NetInput};

pub const NOISE_DIM: usize = 100;
pub const LEAK: f32 = 0.2;
pub const BN_MOMENTUM: f32 = 0.9;
pub const BN_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f32 },
    Tanh,
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "kebab-case")]
pub enum Layer {
    Conv2d { name: String, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    ConvTranspose2d {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    BatchNorm { name: String, channels: usize },
    Activation { activation: Activation },
    MaxPool2,
    Flatten,
    Reshape { channels: usize, height: usize, width: usize },
    Dense { name: String, inputs: usize, outputs: usize },
    Dropout { p: f64 },
}

impl Layer {
    /// Learnable tensors as `(name, shape)`.
    pub fn params(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::Conv2d { name, in_ch, out_ch, kernel, .. } => vec![
                (format!("{name}.weight"), vec![*out_ch, *in_ch, *kernel, *kernel]),
                (format!("{name}.bias"), vec![*out_ch]),
            ],
            Layer::ConvTranspose2d { name, in_ch, out_ch, kernel, .. } => vec![
                (format!("{name}.weight"), vec![*in_ch, *out_ch, *kernel, *kernel]),
                (format!("{name}.bias"), vec![*out_ch]),
            ],
            Layer::BatchNorm { name, channels } => {
                vec![(format!("{name}.gamma"), vec![*channels]), (format!("{name}.beta"), vec![*channels])]
            }
            Layer::Dense { name, inputs, outputs } => {
                vec![(format!("{name}.weight"), vec![*inputs, *outputs]), (format!("{name}.bias"), vec![*outputs])]
            }
            _ => Vec::new(),
        }
    }
}

/// Activation shape between layers, batch axis excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Flat(usize),
    Chw(usize, usize, usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Flat(n) => n,
            Shape::Chw(c, h, w) => c * h * w,
        }
    }

    pub fn dims(self) -> Vec<usize> {
        match self {
            Shape::Flat(n) => vec![n],
            Shape::Chw(c, h, w) => vec![c, h, w],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    /// `z ⊙ embed[class]`.
    Multiply,
    /// `[z, embed[class]]`.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSpec {
    Image { channels: usize, height: usize, width: usize },
    Noise { dim: usize, conditioning: Option<Conditioning> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditioning {
    pub classes: usize,
    pub mode: ConditioningMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights `N(0, std²)`; the conditioning embedding is `N(0, 1)`.
    Normal { std: f64 },
    /// Weights `N(0, 2/fan_in)`.
    HeFanIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub name: String,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: InputSpec,
    pub body: Vec<Layer>,
    pub heads: Vec<Head>,
    pub init: InitScheme,
}

fn check_chain(start: Shape, layers: &[Layer]) -> Result<Shape> {
    let mut s = start;
    for (i, layer) in layers.iter().enumerate() {
        let bad = |msg: String| param(format!("layer {i} ({layer:?}): {msg}"));
        s = match (layer, s) {
            (Layer::Conv2d { in_ch, out_ch, kernel, stride, padding, .. }, Shape::Chw(c, h, w)) => {
                if c != *in_ch {
                    return Err(bad(format!("expects {in_ch} channels, gets {c}")));
                }
                if *stride == 0 || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(bad(format!("kernel does not fit {h}×{w}")));
                }
                let o = |x: usize| (x + 2 * padding - kernel) / stride + 1;
                Shape::Chw(*out_ch, o(h), o(w))
            }
            (Layer::ConvTranspose2d { in_ch, out_ch, kernel, stride, padding, output_padding, .. }, Shape::Chw(c, h, w)) => {
                if c != *in_ch {
                    return Err(bad(format!("expects {in_ch} channels, gets {c}")));
                }
                if *stride == 0 || output_padding >= stride {
                    return Err(bad("need stride ≥ 1 and output_padding < stride".into()));
                }
                let o = |x: usize| ((x - 1) * stride + kernel + output_padding).checked_sub(2 * padding);
                match (o(h), o(w)) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Shape::Chw(*out_ch, oh, ow),
                    _ => return Err(bad("empty output".into())),
                }
            }
            (Layer::BatchNorm { channels, .. }, Shape::Chw(c, ..)) if c == *channels => s,
            (Layer::Activation { .. } | Layer::Dropout { .. }, _) => s,
            (Layer::MaxPool2, Shape::Chw(c, h, w)) if h % 2 == 0 && w % 2 == 0 => Shape::Chw(c, h / 2, w / 2),
            (Layer::Flatten, _) => Shape::Flat(s.numel()),
            (Layer::Reshape { channels, height, width }, _) if s.numel() == channels * height * width => {
                Shape::Chw(*channels, *height, *width)
            }
            (Layer::Dense { inputs, outputs, .. }, Shape::Flat(n)) if n == *inputs => Shape::Flat(*outputs),
            _ => return Err(bad(format!("incompatible with input shape {s:?}"))),
        };
        if let Layer::Dropout { p } = layer {
            if !(0.0..1.0).contains(p) {
                return Err(bad(format!("dropout rate {p} outside [0, 1)")));
            }
        }
    }
    Ok(s)
}

impl ModelSpec {
    /// Shape entering the body.
    pub fn body_input(&self) -> Shape {
        match self.input {
            InputSpec::Image { channels, height, width } => Shape::Chw(channels, height, width),
            InputSpec::Noise { dim, conditioning: Some(Conditioning { mode: ConditioningMode::Concat, .. }) } => {
                Shape::Flat(2 * dim)
            }
            InputSpec::Noise { dim, .. } => Shape::Flat(dim),
        }
    }

    /// Shape-checks the whole spec, returning the body output and head shapes.
    pub fn check(&self) -> Result<(Shape, Vec<Shape>)> {
        let body = check_chain(self.body_input(), &self.body)?;
        let heads = self.heads.iter().map(|h| check_chain(body, &h.layers)).collect::<Result<Vec<_>>>()?;
        let mut names = std::collections::HashSet::new();
        for (n, _) in self.param_shapes() {
            if !names.insert(n.clone()) {
                return Err(param(format!("duplicate parameter name {n}")));
            }
        }
        Ok((body, heads))
    }

    /// Shape after each body layer.
    pub fn body_shapes(&self) -> Result<Vec<Shape>> {
        let mut s = self.body_input();
        let mut out = Vec::with_capacity(self.body.len());
        for layer in &self.body {
            s = check_chain(s, std::slice::from_ref(layer))?;
            out.push(s);
        }
        Ok(out)
    }

    /// Output shape of the network: the single head, or the body if headless.
    pub fn output_shapes(&self) -> Result<Vec<Shape>> {
        let (body, heads) = self.check()?;
        Ok(if heads.is_empty() { vec![body] } else { heads })
    }

    /// All layers with their location, in forward order.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.body.iter().chain(self.heads.iter().flat_map(|h| h.layers.iter()))
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        if let InputSpec::Noise { dim, conditioning: Some(c) } = self.input {
            out.push(("embed.table".to_owned(), vec![c.classes, dim]));
        }
        out.extend(self.layers().flat_map(Layer::params));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers().any(|l| matches!(l, Layer::BatchNorm { .. }))
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.check()?;
        Ok(spec)
    }
}
