use serde::{Deserialize, Serialize};

use super::{
    Activation, Conditioning, ConditioningMode, Head, InitScheme, InputSpec, Layer, ModelSpec, LEAK, NOISE_DIM,
};
use crate::error::{param, Result};

/// Widths of the lesion classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierArch {
    pub channels: [usize; 3],
    pub hidden: usize,
    pub image_size: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch { channels: [32, 64, 128], hidden: 150, image_size: 64 }
    }
}

/// Size and widths of a DCGAN/ACGAN pair.
///
/// The generator projects to `4×4` and doubles the side `log2(size/4)`
/// times; its channel count halves per step down to `gen_base` before the
/// single-channel output. The discriminator mirrors this from `disc_base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanArch {
    pub image_size: usize,
    pub gen_base: usize,
    pub disc_base: usize,
    pub noise_dim: usize,
}

impl Default for GanArch {
    fn default() -> Self {
        GanArch { image_size: 64, gen_base: 128, disc_base: 64, noise_dim: NOISE_DIM }
    }
}

impl GanArch {
    /// Number of 2× resampling stages between `4×4` and the image side.
    pub fn stages(&self) -> Result<usize> {
        let s = self.image_size;
        if s < 8 || !s.is_power_of_two() {
            return Err(param(format!("GAN image size {s} must be a power of two ≥ 8")));
        }
        if self.gen_base == 0 || self.disc_base == 0 || self.noise_dim == 0 {
            return Err(param("GAN widths must be positive"));
        }
        Ok((s / 4).trailing_zeros() as usize)
    }
}

fn act(activation: Activation) -> Layer {
    Layer::Activation { activation }
}

/// Three conv(3×3)+ReLU+max-pool stages, dense hidden layer with ReLU and
/// dropout 0.5, and a 3-way softmax head named `class`.
pub fn build_classifier(arch: &ClassifierArch) -> Result<ModelSpec> {
    let mut body = Vec::new();
    let mut cin = 1;
    for (i, &c) in arch.channels.iter().enumerate() {
        body.push(Layer::Conv2d { name: format!("conv{}", i + 1), in_ch: cin, out_ch: c, kernel: 3, stride: 1, padding: 1 });
        body.push(act(Activation::Relu));
        body.push(Layer::MaxPool2);
        cin = c;
    }
    let side = arch.image_size / 8;
    body.push(Layer::Flatten);
    body.push(Layer::Dense { name: "fc1".into(), inputs: cin * side * side, outputs: arch.hidden });
    body.push(act(Activation::Relu));
    body.push(Layer::Dropout { p: 0.5 });
    let head = Head {
        name: "class".into(),
        layers: vec![
            Layer::Dense { name: "fc2".into(), inputs: arch.hidden, outputs: 3 },
            act(Activation::Softmax),
        ],
    };
    let spec = ModelSpec {
        name: "classifier".into(),
        input: InputSpec::Image { channels: 1, height: arch.image_size, width: arch.image_size },
        body,
        heads: vec![head],
        init: InitScheme::HeFanIn,
    };
    spec.check()?;
    Ok(spec)
}

fn generator(arch: &GanArch, name: &str, conditioning: Option<Conditioning>) -> Result<ModelSpec> {
    let n = arch.stages()?;
    let top = arch.gen_base << (n - 1);
    let input = InputSpec::Noise { dim: arch.noise_dim, conditioning };
    let mut spec = ModelSpec { name: name.into(), input, body: Vec::new(), heads: Vec::new(), init: InitScheme::Normal { std: 0.02 } };
    let z = spec.body_input().numel();
    let body = &mut spec.body;
    body.push(Layer::Dense { name: "project".into(), inputs: z, outputs: top * 16 });
    body.push(Layer::Reshape { channels: top, height: 4, width: 4 });
    body.push(Layer::BatchNorm { name: "bn0".into(), channels: top });
    body.push(act(Activation::Relu));
    let mut cin = top;
    for i in 0..n {
        let last = i + 1 == n;
        let cout = if last { 1 } else { cin / 2 };
        body.push(Layer::ConvTranspose2d {
            name: format!("up{}", i + 1),
            in_ch: cin,
            out_ch: cout,
            kernel: 5,
            stride: 2,
            padding: 2,
            output_padding: 1,
        });
        if last {
            body.push(act(Activation::Tanh));
        } else {
            body.push(Layer::BatchNorm { name: format!("bn{}", i + 1), channels: cout });
            body.push(act(Activation::Relu));
        }
        cin = cout;
    }
    spec.check()?;
    Ok(spec)
}

fn discriminator_body(arch: &GanArch) -> Result<(Vec<Layer>, usize)> {
    let n = arch.stages()?;
    let mut body = Vec::new();
    let mut cin = 1;
    for i in 0..n {
        let cout = arch.disc_base << i;
        body.push(Layer::Conv2d { name: format!("down{}", i + 1), in_ch: cin, out_ch: cout, kernel: 5, stride: 2, padding: 2 });
        if i > 0 {
            body.push(Layer::BatchNorm { name: format!("bn{}", i + 1), channels: cout });
        }
        body.push(act(Activation::LeakyRelu { alpha: LEAK }));
        cin = cout;
    }
    body.push(Layer::Flatten);
    Ok((body, cin * 16))
}

fn source_head(features: usize) -> Head {
    Head {
        name: "source".into(),
        layers: vec![
            Layer::Dense { name: "source".into(), inputs: features, outputs: 1 },
            act(Activation::Sigmoid),
        ],
    }
}

fn gan_image(arch: &GanArch) -> InputSpec {
    InputSpec::Image { channels: 1, height: arch.image_size, width: arch.image_size }
}

/// Projection to `4×4`, then 5×5 fractionally-strided convolutions with
/// batch norm + ReLU, ending in a single tanh channel.
pub fn build_dcgan_generator(arch: &GanArch) -> Result<ModelSpec> {
    generator(arch, "dcgan-generator", None)
}

/// 5×5 stride-2 convolutions with leaky ReLU (batch norm on all but the
/// first), flattened into a sigmoid `source` head.
pub fn build_dcgan_discriminator(arch: &GanArch) -> Result<ModelSpec> {
    let (body, features) = discriminator_body(arch)?;
    let spec = ModelSpec {
        name: "dcgan-discriminator".into(),
        input: gan_image(arch),
        body,
        heads: vec![source_head(features)],
        init: InitScheme::Normal { std: 0.02 },
    };
    spec.check()?;
    Ok(spec)
}

/// The DCGAN generator fed with noise combined with a learned per-class
/// embedding.
pub fn build_acgan_generator(arch: &GanArch, mode: ConditioningMode) -> Result<ModelSpec> {
    generator(arch, "acgan-generator", Some(Conditioning { classes: 3, mode }))
}

/// The DCGAN discriminator body with a `source` head and a 3-way softmax
/// `class` head.
pub fn build_acgan_discriminator(arch: &GanArch) -> Result<ModelSpec> {
    let (body, features) = discriminator_body(arch)?;
    let class = Head {
        name: "class".into(),
        layers: vec![
            Layer::Dense { name: "class".into(), inputs: features, outputs: 3 },
            act(Activation::Softmax),
        ],
    };
    let spec = ModelSpec {
        name: "acgan-discriminator".into(),
        input: gan_image(arch),
        body,
        heads: vec![source_head(features), class],
        init: InitScheme::Normal { std: 0.02 },
    };
    spec.check()?;
    Ok(spec)
}
