use std::collections::BTreeMap;
use std::path::Path;

use agf_tensor::{checkpoint, BatchNormConfig, Element, Graph, NamedTensor, NormMode, RunningStats, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Activation, ConditioningMode, InitScheme, InputSpec, Layer, ModelSpec, BN_EPSILON, BN_MOMENTUM};
use crate::error::{param, Error, Result};
use crate::rng;

/// Layer behaviour for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub norm: NormMode,
    pub dropout: bool,
}

impl Mode {
    /// Batch statistics (updating running stats), dropout on.
    pub const TRAIN: Mode = Mode { norm: NormMode::Train, dropout: true };
    /// Batch statistics without touching running stats; used for the network
    /// that is held fixed during the other network's GAN step.
    pub const FROZEN: Mode = Mode { norm: NormMode::TrainFrozen, dropout: true };
    /// Running statistics, dropout off.
    pub const INFER: Mode = Mode { norm: NormMode::Infer, dropout: false };
}

#[derive(Debug, Clone, Copy)]
pub enum NetInput<'a> {
    Image(Var),
    /// Noise `N×dim`, with per-sample classes for conditioned generators.
    Noise { z: Var, classes: Option<&'a [usize]> },
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Body output (the feature vector for classifiers and discriminators).
    pub features: Var,
    /// One entry per head, or the body output for headless networks.
    pub outputs: Vec<Var>,
    /// The same outputs before their final activation.
    pub logits: Vec<Var>,
}

/// A spec with its parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Element> {
    pub spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    running: BTreeMap<String, RunningStats<T>>,
}

fn fan_in(shape: &[usize], transposed: bool) -> usize {
    match shape {
        [i, _] => *i,
        [o, i, k, k2] => (if transposed { *o } else { *i }) * k * k2,
        _ => 1,
    }
}

impl<T: Element> Model<T> {
    /// Fresh parameters; each tensor draws from its own keyed stream.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.check()?;
        let transposed: std::collections::HashSet<String> = spec
            .layers()
            .filter_map(|l| match l {
                Layer::ConvTranspose2d { name, .. } => Some(format!("{name}.weight")),
                _ => None,
            })
            .collect();
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in spec.param_shapes() {
            let n: usize = shape.iter().product();
            let mut r = rng::stream(seed, "init", &[rng::key_of(&name)]);
            let std = if name == "embed.table" {
                Some(1.0)
            } else if name.ends_with(".weight") {
                Some(match spec.init {
                    InitScheme::Normal { std } => std,
                    InitScheme::HeFanIn => (2.0 / fan_in(&shape, transposed.contains(&name)) as f64).sqrt(),
                })
            } else {
                None
            };
            let data: Vec<T> = match std {
                Some(std) => {
                    let d = Normal::new(0.0, std).map_err(|e| param(e.to_string()))?;
                    (0..n).map(|_| T::from_f64_lossy(d.sample(&mut r))).collect()
                }
                None if name.ends_with(".gamma") => vec![T::one(); n],
                None => vec![T::zero(); n],
            };
            names.push(name);
            params.push(Tensor::new(&shape, data)?);
        }
        let running = spec
            .layers()
            .filter_map(|l| match l {
                Layer::BatchNorm { name, channels } => Some((name.clone(), RunningStats::new(*channels))),
                _ => None,
            })
            .collect();
        Ok(Model { spec: spec.clone(), names, params, running })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn running(&self, layer: &str) -> Option<&RunningStats<T>> {
        self.running.get(layer)
    }

    pub(crate) fn running_snapshot(&self) -> BTreeMap<String, RunningStats<T>> {
        self.running.clone()
    }

    pub(crate) fn restore_running(&mut self, saved: BTreeMap<String, RunningStats<T>>) {
        self.running = saved;
    }

    /// Adds the parameters to `g`; `trainable` decides whether gradients
    /// are tracked for them.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.input(p.clone()) })
            .collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.names.iter().position(|n| n == name).expect("spec-declared parameter")]
    }

    #[allow(clippy::too_many_arguments)]
    fn chain<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        vars: &[Var],
        layers: &[Layer],
        mut x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let mut pre = x;
        let bn = BatchNormConfig { momentum: T::from_f64_lossy(BN_MOMENTUM as f64), epsilon: T::from_f64_lossy(BN_EPSILON as f64) };
        for layer in layers {
            if !matches!(layer, Layer::Activation { .. }) {
                pre = x;
            }
            x = match layer {
                Layer::Conv2d { name, stride, padding, .. } => {
                    let (w, b) = (self.var(vars, &format!("{name}.weight")), self.var(vars, &format!("{name}.bias")));
                    g.conv2d(x, w, b, *stride, *padding)?
                }
                Layer::ConvTranspose2d { name, stride, padding, output_padding, .. } => {
                    let (w, b) = (self.var(vars, &format!("{name}.weight")), self.var(vars, &format!("{name}.bias")));
                    g.conv_transpose2d(x, w, b, *stride, *padding, *output_padding)?
                }
                Layer::BatchNorm { name, .. } => {
                    let (gm, bt) = (self.var(vars, &format!("{name}.gamma")), self.var(vars, &format!("{name}.beta")));
                    let stats = self.running.get_mut(name).expect("running stats per batch-norm layer");
                    g.batchnorm2d(x, gm, bt, stats, mode.norm, bn)?
                }
                Layer::Activation { activation } => {
                    pre = x;
                    match activation {
                        Activation::Relu => g.relu(x),
                        Activation::LeakyRelu { alpha } => g.leaky_relu(x, T::from_f64_lossy(*alpha as f64)),
                        Activation::Tanh => g.tanh(x),
                        Activation::Sigmoid => g.sigmoid(x),
                        Activation::Softmax => g.softmax(x),
                    }
                }
                Layer::MaxPool2 => g.maxpool2d(x)?,
                Layer::Flatten => g.flatten(x)?,
                Layer::Reshape { channels, height, width } => {
                    let n = g.shape(x)[0];
                    g.reshape(x, &[n, *channels, *height, *width])?
                }
                Layer::Dense { name, .. } => {
                    let (w, b) = (self.var(vars, &format!("{name}.weight")), self.var(vars, &format!("{name}.bias")));
                    g.dense(x, w, b)?
                }
                Layer::Dropout { p } => g.dropout(x, *p, mode.dropout, rng)?,
            };
        }
        Ok((x, pre))
    }

    /// Runs the network on `input`; `vars` must come from [`Model::bind`]
    /// on the same graph.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        vars: &[Var],
        input: NetInput<'_>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let x = match (self.spec.input, input) {
            (InputSpec::Image { channels, height, width }, NetInput::Image(x)) => {
                let s = g.shape(x);
                if s.len() != 4 || s[1..] != [channels, height, width] {
                    return Err(param(format!("{} expects N×{channels}×{height}×{width}, got {s:?}", self.spec.name)));
                }
                x
            }
            (InputSpec::Noise { dim, conditioning }, NetInput::Noise { z, classes }) => {
                let s = g.shape(z).to_vec();
                if s.len() != 2 || s[1] != dim {
                    return Err(param(format!("{} expects N×{dim} noise, got {s:?}", self.spec.name)));
                }
                match (conditioning, classes) {
                    (None, None) => z,
                    (Some(c), Some(labels)) => {
                        if labels.len() != s[0] {
                            return Err(param(format!("{} class labels for {} noise rows", labels.len(), s[0])));
                        }
                        let e = g.embedding(self.var(vars, "embed.table"), labels)?;
                        match c.mode {
                            ConditioningMode::Multiply => g.mul(z, e)?,
                            ConditioningMode::Concat => g.concat(z, e)?,
                        }
                    }
                    (None, Some(_)) => return Err(param(format!("{} is not class-conditioned", self.spec.name))),
                    (Some(_), None) => return Err(param(format!("{} needs class labels", self.spec.name))),
                }
            }
            _ => return Err(param(format!("wrong input kind for {}", self.spec.name))),
        };
        let body = self.spec.body.clone();
        let (features, body_pre) = self.chain(g, vars, &body, x, mode, rng)?;
        let heads = self.spec.heads.clone();
        if heads.is_empty() {
            return Ok(Forward { features, outputs: vec![features], logits: vec![body_pre] });
        }
        let mut outputs = Vec::new();
        let mut logits = Vec::new();
        for h in &heads {
            let (out, pre) = self.chain(g, vars, &h.layers, features, mode, rng)?;
            outputs.push(out);
            logits.push(pre);
        }
        Ok(Forward { features, outputs, logits })
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            running: self
                .running
                .iter()
                .map(|(k, r)| {
                    let c = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().expect("finite"))).collect();
                    (k.clone(), RunningStats { mean: c(&r.mean), var: c(&r.var) })
                })
                .collect(),
        }
    }
}

impl Model<f32> {
    /// Parameters followed by running statistics, as checkpoint records.
    pub fn to_records(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> =
            self.names.iter().zip(&self.params).map(|(n, p)| NamedTensor::new(n.clone(), p.clone())).collect();
        for (layer, r) in &self.running {
            let c = r.mean.len();
            out.push(NamedTensor::new(format!("{layer}.running_mean"), Tensor::new(&[c], r.mean.clone()).expect("shape")));
            out.push(NamedTensor::new(format!("{layer}.running_var"), Tensor::new(&[c], r.var.clone()).expect("shape")));
        }
        out
    }

    /// Rebuilds a model from checkpoint records; unrelated records are ignored.
    pub fn from_records(spec: &ModelSpec, records: &[NamedTensor]) -> Result<Self> {
        let mut model = Model::<f32>::init(spec, 0)?;
        let find = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
            let rec = records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| param(format!("checkpoint lacks {name}")))?;
            if rec.tensor.shape() != shape {
                return Err(param(format!("{name} has shape {:?}, spec wants {shape:?}", rec.tensor.shape())));
            }
            if !rec.tensor.is_finite() {
                return Err(Error::Numeric(format!("{name} holds non-finite values")));
            }
            Ok(rec.tensor.clone())
        };
        for i in 0..model.names.len() {
            let shape = model.params[i].shape().to_vec();
            model.params[i] = find(&model.names[i], &shape)?;
        }
        for (layer, r) in model.running.iter_mut() {
            let c = [r.mean.len()];
            r.mean = find(&format!("{layer}.running_mean"), &c)?.into_data();
            r.var = find(&format!("{layer}.running_var"), &c)?.into_data();
        }
        Ok(model)
    }

    /// SHA-256 of the checkpoint encoding.
    pub fn digest(&self) -> String {
        rng::sha256_hex(&checkpoint::encode(&self.to_records()))
    }

    /// Writes `path` (AGFP) plus `path.json` holding `meta`. `extra` records
    /// (e.g. preprocessing buffers) are appended to the checkpoint.
    pub fn save(&self, path: &Path, extra: &[NamedTensor], meta: &ModelMeta) -> Result<String> {
        let mut records = self.to_records();
        records.extend_from_slice(extra);
        let bytes = checkpoint::encode(&records);
        std::fs::write(path, &bytes)?;
        let mut meta = meta.clone();
        meta.spec_hash = self.spec.hash();
        meta.spec = self.spec.clone();
        meta.checkpoint_sha256 = rng::sha256_hex(&bytes);
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(meta.checkpoint_sha256)
    }

    /// Loads a checkpoint and its sidecar, checking the recorded hashes.
    pub fn load(path: &Path) -> Result<(Self, Vec<NamedTensor>, ModelMeta)> {
        let bytes = std::fs::read(path)?;
        let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if meta.spec.hash() != meta.spec_hash {
            return Err(param(format!("{}: sidecar spec hash mismatch", path.display())));
        }
        if rng::sha256_hex(&bytes) != meta.checkpoint_sha256 {
            return Err(param(format!("{}: checkpoint hash mismatch", path.display())));
        }
        let records = checkpoint::decode(&bytes)?;
        let model = Model::from_records(&meta.spec, &records)?;
        Ok((model, records, meta))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// JSON sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub spec_hash: String,
    pub spec: ModelSpec,
    pub checkpoint_sha256: String,
    /// Free-form training metadata (config, data hash, epochs run, ...).
    pub training: serde_json::Value,
}

impl ModelMeta {
    pub fn new(spec: &ModelSpec, training: serde_json::Value) -> Self {
        ModelMeta { spec_hash: spec.hash(), spec: spec.clone(), checkpoint_sha256: String::new(), training }
    }
}
