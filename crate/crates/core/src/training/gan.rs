use std::time::Instant;

use agf_tensor::{AcganHeads, Graph, NamedTensor, OptimizerState, Target, Tensor};
use rand::Rng as _;

use super::{all_finite, batch_tensor, epoch_order, EpochRecord, NoiseDist, TrainConfig, TrainLog};
use crate::dataset::{LesionClass, Provenance, RoiImage, ROI_PIXELS};
use crate::error::{param, Error, Result};
use crate::imageops::{from_tanh_range, to_tanh_range, GrayImage};
use crate::models::{InputSpec, Mode, Model, ModelSpec, NetInput};
use crate::rng;

/// Discriminator-step statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DStats {
    pub d_loss: f64,
    /// Fraction of real samples scored above 0.5.
    pub real_accuracy: f64,
    /// Fraction of generated samples scored below 0.5.
    pub fake_accuracy: f64,
    /// ACGAN only: class-head accuracy on the real batch.
    pub class_accuracy: Option<f64>,
}

/// Trained generator/discriminator pair and its log.
#[derive(Debug, Clone)]
pub struct GanOutcome {
    pub generator: Model<f32>,
    pub discriminator: Model<f32>,
    pub log: TrainLog,
}

fn image_side(spec: &ModelSpec) -> Result<usize> {
    match spec.input {
        InputSpec::Image { channels: 1, height, width } if height == width => Ok(height),
        _ => Err(param(format!("{} must take single-channel square images", spec.name))),
    }
}

fn noise_dim(spec: &ModelSpec) -> Result<usize> {
    match spec.input {
        InputSpec::Noise { dim, .. } => Ok(dim),
        _ => Err(param(format!("{} is not a generator", spec.name))),
    }
}

fn frac(values: &[f32], pred: impl Fn(f32) -> bool) -> f64 {
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len().max(1) as f64
}

/// State shared by both GAN trainers.
struct Pair {
    gen: Model<f32>,
    disc: Model<f32>,
    g_opt: OptimizerState<f32>,
    d_opt: OptimizerState<f32>,
    cfg: TrainConfig,
    side: usize,
    zdim: usize,
    iteration: u64,
    skipped: u64,
}

impl Pair {
    fn new(gen_spec: &ModelSpec, disc_spec: &ModelSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate(true)?;
        let side = image_side(disc_spec)?;
        let zdim = noise_dim(gen_spec)?;
        let out = gen_spec.output_shapes()?;
        if out != [crate::models::Shape::Chw(1, side, side)] {
            return Err(param(format!("generator output {out:?} does not match {side}×{side} discriminator input")));
        }
        Ok(Pair {
            gen: Model::init(gen_spec, rng::child_seed(cfg.seed, "gen-init", &[]))?,
            disc: Model::init(disc_spec, rng::child_seed(cfg.seed, "disc-init", &[]))?,
            g_opt: OptimizerState::new(cfg.optimizer),
            d_opt: OptimizerState::new(cfg.optimizer),
            cfg: cfg.clone(),
            side,
            zdim,
            iteration: 0,
            skipped: 0,
        })
    }

    fn noise(&self, key: &str, n: usize) -> Tensor<f32> {
        self.cfg.noise.sample(&mut rng::stream(self.cfg.seed, key, &[self.iteration]), n, self.zdim)
    }

    fn fake_classes(&self, key: &str, n: usize) -> Vec<usize> {
        let mut r = rng::stream(self.cfg.seed, key, &[self.iteration]);
        (0..n).map(|_| r.random_range(0..LesionClass::COUNT)).collect()
    }

    fn snapshot(&self) -> Vec<NamedTensor> {
        let mut v: Vec<NamedTensor> = self
            .gen
            .to_records()
            .into_iter()
            .map(|mut r| {
                r.name = format!("generator/{}", r.name);
                r
            })
            .collect();
        v.extend(self.disc.to_records().into_iter().map(|mut r| {
            r.name = format!("discriminator/{}", r.name);
            r
        }));
        v
    }

    /// Running statistics of both networks, taken before a step so that a
    /// diverging step can be rolled back before reporting.
    fn save_running(&self) -> RunningPair {
        (self.gen.running_snapshot(), self.disc.running_snapshot())
    }

    fn diverged(&mut self, before: RunningPair, what: &str, v: f64) -> Error {
        self.gen.restore_running(before.0);
        self.disc.restore_running(before.1);
        Error::Divergence { iteration: self.iteration, detail: format!("{what} is {v}"), last_good: Box::new(self.snapshot()) }
    }

    /// Generated batch as a constant (no gradient), from a frozen generator.
    fn fakes(&mut self, z: Tensor<f32>, classes: Option<&[usize]>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let vars = self.gen.bind(&mut g, false);
        let zi = g.input(z);
        let f = self.gen.forward(&mut g, &vars, NetInput::Noise { z: zi, classes }, Mode::FROZEN, &mut rng::stream(0, "unused", &[]))?;
        Ok(g.value(f.outputs[0]).clone())
    }

    fn apply(graph: &mut Graph<f32>, vars: &[agf_tensor::Var], model: &mut Model<f32>, opt: &mut OptimizerState<f32>, skipped: &mut u64) -> Result<()> {
        let grads: Vec<Tensor<f32>> = vars.iter().map(|&v| graph.take_grad(v).unwrap_or_else(|| Tensor::zeros(&[1]))).collect();
        if !all_finite(&grads) || grads.iter().zip(model.params()).any(|(g, p)| g.shape() != p.shape()) {
            *skipped += 1;
            return Ok(());
        }
        opt.step(model.params_mut(), &grads)?;
        Ok(())
    }

    fn backward(graph: &mut Graph<f32>, loss: agf_tensor::Var) -> Result<bool> {
        match graph.backward(loss) {
            Ok(()) => Ok(true),
            Err(agf_tensor::TensorError::Numeric(_)) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn batch(&self, images: &[Vec<f32>], idx: &[usize]) -> Result<Tensor<f32>> {
        let px: Vec<&[f32]> = idx.iter().map(|&i| images[i].as_slice()).collect();
        batch_tensor(&px, self.side, |_, v| to_tanh_range(v))
    }
}

type RunningPair = (
    std::collections::BTreeMap<String, agf_tensor::RunningStats<f32>>,
    std::collections::BTreeMap<String, agf_tensor::RunningStats<f32>>,
);

/// Per-class DCGAN training with public single-step access.
pub struct DcganTrainer {
    pair: Pair,
}

impl DcganTrainer {
    pub fn new(gen_spec: &ModelSpec, disc_spec: &ModelSpec, cfg: &TrainConfig) -> Result<Self> {
        if !matches!(gen_spec.input, InputSpec::Noise { conditioning: None, .. }) {
            return Err(param("DCGAN generator must be unconditioned"));
        }
        Ok(DcganTrainer { pair: Pair::new(gen_spec, disc_spec, cfg)? })
    }

    pub fn generator(&self) -> &Model<f32> {
        &self.pair.gen
    }

    pub fn discriminator(&self) -> &Model<f32> {
        &self.pair.disc
    }

    pub fn iteration(&self) -> u64 {
        self.pair.iteration
    }

    /// One discriminator update on a real batch (values in `[−1, 1]`) and an
    /// equally sized generated batch. The generator is untouched.
    pub fn d_step(&mut self, real: &Tensor<f32>) -> Result<DStats> {
        let p = &mut self.pair;
        let before = p.save_running();
        let n = real.shape()[0];
        let fake = p.fakes(p.noise("noise-d", n), None)?;
        let mut g = Graph::new();
        let vars = p.disc.bind(&mut g, true);
        let (ri, fi) = (g.input(real.clone()), g.input(fake));
        let mut unused = rng::stream(0, "unused", &[]);
        let dr = p.disc.forward(&mut g, &vars, NetInput::Image(ri), Mode::TRAIN, &mut unused)?.outputs[0];
        let df = p.disc.forward(&mut g, &vars, NetInput::Image(fi), Mode::TRAIN, &mut unused)?.outputs[0];
        let (d_loss, _) = g.gan_losses(dr, df)?;
        let lv = g.value(d_loss).item() as f64;
        if !lv.is_finite() {
            return Err(p.diverged(before, "d_loss", lv));
        }
        let stats = DStats {
            d_loss: lv,
            real_accuracy: frac(g.value(dr).data(), |v| v > 0.5),
            fake_accuracy: frac(g.value(df).data(), |v| v < 0.5),
            class_accuracy: None,
        };
        if Pair::backward(&mut g, d_loss)? {
            Pair::apply(&mut g, &vars, &mut p.disc, &mut p.d_opt, &mut p.skipped)?;
        } else {
            p.skipped += 1;
        }
        Ok(stats)
    }

    /// One generator update against the current (frozen) discriminator,
    /// minimizing `−mean log D(G(z))`.
    pub fn g_step(&mut self, n: usize) -> Result<f64> {
        let p = &mut self.pair;
        let before = p.save_running();
        let z = p.noise("noise-g", n);
        let mut g = Graph::new();
        let gv = p.gen.bind(&mut g, true);
        let dv = p.disc.bind(&mut g, false);
        let zi = g.input(z);
        let mut unused = rng::stream(0, "unused", &[]);
        let fake = p.gen.forward(&mut g, &gv, NetInput::Noise { z: zi, classes: None }, Mode::TRAIN, &mut unused)?.outputs[0];
        let df = p.disc.forward(&mut g, &dv, NetInput::Image(fake), Mode::FROZEN, &mut unused)?.outputs[0];
        let g_loss = g.binary_log_loss(df, Target::One);
        let lv = g.value(g_loss).item() as f64;
        if !lv.is_finite() {
            return Err(p.diverged(before, "g_loss", lv));
        }
        if Pair::backward(&mut g, g_loss)? {
            Pair::apply(&mut g, &gv, &mut p.gen, &mut p.g_opt, &mut p.skipped)?;
        } else {
            p.skipped += 1;
        }
        p.iteration += 1;
        Ok(lv)
    }

    /// Alternating 1:1 updates; an epoch is one pass over `images`
    /// (each `side×side`, values in `[0, 1]`).
    pub fn train(mut self, images: &[Vec<f32>], mut on_epoch: impl FnMut(&EpochRecord, &Model<f32>) -> Result<()>) -> Result<GanOutcome> {
        if images.is_empty() {
            return Err(Error::Training("no training images".into()));
        }
        let cfg = self.pair.cfg.clone();
        let b = cfg.effective_batch(images.len());
        let mut log = TrainLog::default();
        for epoch in 0..cfg.epochs {
            let started = Instant::now();
            let order = epoch_order(cfg.seed, epoch, images.len());
            let skipped_before = self.pair.skipped;
            let (mut dl, mut gl, mut ra, mut fa, mut steps) = (0.0, 0.0, 0.0, 0.0, 0usize);
            let mut stop = false;
            for chunk in order.chunks_exact(b) {
                if cfg.max_iterations.is_some_and(|m| self.pair.iteration >= m) {
                    stop = true;
                    break;
                }
                let real = self.pair.batch(images, chunk)?;
                let s = self.d_step(&real)?;
                gl += self.g_step(b)?;
                dl += s.d_loss;
                ra += s.real_accuracy;
                fa += s.fake_accuracy;
                steps += 1;
            }
            if steps > 0 {
                let k = steps as f64;
                let mut rec = EpochRecord::new(epoch, cfg.seed, self.pair.iteration, started);
                rec.d_loss = Some(dl / k);
                rec.g_loss = Some(gl / k);
                rec.d_real_accuracy = Some(ra / k);
                rec.d_fake_accuracy = Some(fa / k);
                rec.skipped_steps = self.pair.skipped - skipped_before;
                on_epoch(&rec, &self.pair.gen)?;
                log.records.push(rec);
            }
            if stop {
                break;
            }
        }
        Ok(GanOutcome { generator: self.pair.gen, discriminator: self.pair.disc, log })
    }
}

/// ACGAN training over all classes with public single-step access.
pub struct AcganTrainer {
    pair: Pair,
}

impl AcganTrainer {
    pub fn new(gen_spec: &ModelSpec, disc_spec: &ModelSpec, cfg: &TrainConfig) -> Result<Self> {
        if !matches!(gen_spec.input, InputSpec::Noise { conditioning: Some(_), .. }) {
            return Err(param("ACGAN generator must be class-conditioned"));
        }
        if disc_spec.heads.len() != 2 {
            return Err(param("ACGAN discriminator needs source and class heads"));
        }
        Ok(AcganTrainer { pair: Pair::new(gen_spec, disc_spec, cfg)? })
    }

    pub fn generator(&self) -> &Model<f32> {
        &self.pair.gen
    }

    pub fn discriminator(&self) -> &Model<f32> {
        &self.pair.disc
    }

    /// Discriminator update minimizing `−(Ls + Lc)`.
    pub fn d_step(&mut self, real: &Tensor<f32>, labels: &[usize]) -> Result<DStats> {
        let p = &mut self.pair;
        let before = p.save_running();
        let n = real.shape()[0];
        let fake_labels = p.fake_classes("classes-d", n);
        let fake = p.fakes(p.noise("noise-d", n), Some(&fake_labels))?;
        let mut g = Graph::new();
        let vars = p.disc.bind(&mut g, true);
        let (ri, fi) = (g.input(real.clone()), g.input(fake));
        let mut unused = rng::stream(0, "unused", &[]);
        let r = p.disc.forward(&mut g, &vars, NetInput::Image(ri), Mode::TRAIN, &mut unused)?;
        let f = p.disc.forward(&mut g, &vars, NetInput::Image(fi), Mode::TRAIN, &mut unused)?;
        let heads = AcganHeads {
            source_real: r.outputs[0],
            source_fake: f.outputs[0],
            class_real: r.outputs[1],
            class_fake: f.outputs[1],
            real_labels: labels,
            fake_labels: &fake_labels,
        };
        let (d_loss, _) = g.acgan_losses(heads)?;
        let lv = g.value(d_loss).item() as f64;
        if !lv.is_finite() {
            return Err(p.diverged(before, "d_loss", lv));
        }
        let pred = super::classifier::argmax_rows(g.value(r.outputs[1]).data(), 3);
        let stats = DStats {
            d_loss: lv,
            real_accuracy: frac(g.value(r.outputs[0]).data(), |v| v > 0.5),
            fake_accuracy: frac(g.value(f.outputs[0]).data(), |v| v < 0.5),
            class_accuracy: Some(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / n as f64),
        };
        if Pair::backward(&mut g, d_loss)? {
            Pair::apply(&mut g, &vars, &mut p.disc, &mut p.d_opt, &mut p.skipped)?;
        } else {
            p.skipped += 1;
        }
        Ok(stats)
    }

    /// Generator update minimizing `−(Lc − Ls)`; the real batch enters only
    /// through constant terms.
    pub fn g_step(&mut self, real: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
        let p = &mut self.pair;
        let before = p.save_running();
        let n = real.shape()[0];
        let fake_labels = p.fake_classes("classes-g", n);
        let z = p.noise("noise-g", n);
        let mut g = Graph::new();
        let gv = p.gen.bind(&mut g, true);
        let dv = p.disc.bind(&mut g, false);
        let (zi, ri) = (g.input(z), g.input(real.clone()));
        let mut unused = rng::stream(0, "unused", &[]);
        let fake = p.gen.forward(&mut g, &gv, NetInput::Noise { z: zi, classes: Some(&fake_labels) }, Mode::TRAIN, &mut unused)?.outputs[0];
        let r = p.disc.forward(&mut g, &dv, NetInput::Image(ri), Mode::FROZEN, &mut unused)?;
        let f = p.disc.forward(&mut g, &dv, NetInput::Image(fake), Mode::FROZEN, &mut unused)?;
        let heads = AcganHeads {
            source_real: r.outputs[0],
            source_fake: f.outputs[0],
            class_real: r.outputs[1],
            class_fake: f.outputs[1],
            real_labels: labels,
            fake_labels: &fake_labels,
        };
        let (_, g_loss) = g.acgan_losses(heads)?;
        let lv = g.value(g_loss).item() as f64;
        if !lv.is_finite() {
            return Err(p.diverged(before, "g_loss", lv));
        }
        if Pair::backward(&mut g, g_loss)? {
            Pair::apply(&mut g, &gv, &mut p.gen, &mut p.g_opt, &mut p.skipped)?;
        } else {
            p.skipped += 1;
        }
        p.iteration += 1;
        Ok(lv)
    }

    pub fn train(
        mut self,
        images: &[Vec<f32>],
        labels: &[LesionClass],
        mut on_epoch: impl FnMut(&EpochRecord, &Model<f32>) -> Result<()>,
    ) -> Result<GanOutcome> {
        if images.len() != labels.len() {
            return Err(param(format!("{} images but {} labels", images.len(), labels.len())));
        }
        let present: std::collections::BTreeSet<LesionClass> = labels.iter().copied().collect();
        if present.len() != LesionClass::COUNT {
            return Err(Error::Training("ACGAN training needs all three classes".into()));
        }
        let cfg = self.pair.cfg.clone();
        let b = cfg.effective_batch(images.len());
        let mut log = TrainLog::default();
        for epoch in 0..cfg.epochs {
            let started = Instant::now();
            let order = epoch_order(cfg.seed, epoch, images.len());
            let skipped_before = self.pair.skipped;
            let (mut dl, mut gl, mut ra, mut fa, mut ca, mut steps) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
            let mut stop = false;
            for chunk in order.chunks_exact(b) {
                if cfg.max_iterations.is_some_and(|m| self.pair.iteration >= m) {
                    stop = true;
                    break;
                }
                let real = self.pair.batch(images, chunk)?;
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i].index()).collect();
                let s = self.d_step(&real, &y)?;
                gl += self.g_step(&real, &y)?;
                dl += s.d_loss;
                ra += s.real_accuracy;
                fa += s.fake_accuracy;
                ca += s.class_accuracy.unwrap_or(0.0);
                steps += 1;
            }
            if steps > 0 {
                let k = steps as f64;
                let mut rec = EpochRecord::new(epoch, cfg.seed, self.pair.iteration, started);
                rec.d_loss = Some(dl / k);
                rec.g_loss = Some(gl / k);
                rec.d_real_accuracy = Some(ra / k);
                rec.d_fake_accuracy = Some(fa / k);
                rec.class_accuracy = Some(ca / k);
                rec.skipped_steps = self.pair.skipped - skipped_before;
                on_epoch(&rec, &self.pair.gen)?;
                log.records.push(rec);
            }
            if stop {
                break;
            }
        }
        Ok(GanOutcome { generator: self.pair.gen, discriminator: self.pair.disc, log })
    }
}

/// `n` generator samples in inference mode, mapped back to `[0, 1]`.
/// Sample `i` depends only on `(seed, i)`, not on batching.
pub fn generate(generator: &Model<f32>, class: Option<LesionClass>, n: usize, seed: u64, noise: NoiseDist) -> Result<Vec<(u64, GrayImage)>> {
    let zdim = noise_dim(&generator.spec)?;
    let conditioned = matches!(generator.spec.input, InputSpec::Noise { conditioning: Some(_), .. });
    if conditioned != class.is_some() {
        return Err(param(if conditioned { "conditioned generator needs a class" } else { "DCGAN generators take no class" }));
    }
    let side = match generator.spec.output_shapes()?[..] {
        [crate::models::Shape::Chw(1, h, w)] if h == w => h,
        ref other => return Err(param(format!("generator output {other:?} is not a single-channel image"))),
    };
    let mut m = generator.clone();
    let mut out = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(64) {
        let seeds: Vec<u64> = chunk.iter().map(|&i| rng::child_seed(seed, "synth", &[i as u64])).collect();
        let mut z = Vec::with_capacity(chunk.len() * zdim);
        for &s in &seeds {
            z.extend_from_slice(noise.sample(&mut rng::stream(s, "noise", &[]), 1, zdim).data());
        }
        let labels = class.map(|c| vec![c.index(); chunk.len()]);
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let zi = g.input(Tensor::new(&[chunk.len(), zdim], z)?);
        let f = m.forward(&mut g, &vars, NetInput::Noise { z: zi, classes: labels.as_deref() }, Mode::INFER, &mut rng::stream(0, "unused", &[]))?;
        for (img, &s) in g.value(f.outputs[0]).data().chunks(side * side).zip(&seeds) {
            let px = img.iter().map(|&v| from_tanh_range(v).clamp(0.0, 1.0)).collect();
            out.push((s, GrayImage::new(side, side, px)?));
        }
    }
    Ok(out)
}

/// `n` synthetic 64×64 ROIs of `class` with provenance `(model_id, seed)`.
/// `conditioned` selects ACGAN-style class input.
pub fn synthesize(
    generator: &Model<f32>,
    model_id: &str,
    class: LesionClass,
    conditioned: bool,
    n: usize,
    seed: u64,
    noise: NoiseDist,
) -> Result<Vec<RoiImage>> {
    if n == 0 {
        return Err(param("n must be at least 1"));
    }
    let samples = generate(generator, conditioned.then_some(class), n, seed, noise)?;
    samples
        .into_iter()
        .enumerate()
        .map(|(i, (s, img))| {
            if img.pixels().len() != ROI_PIXELS {
                return Err(param("synthetic ROIs must be 64×64"));
            }
            Ok(RoiImage {
                id: format!("synth-{model_id}-{}-{i:05}", class.name()),
                patient_id: "synthetic".into(),
                class,
                diameter_mm: 0.0,
                pixels: img.into_pixels(),
                provenance: Provenance::Synthetic { model: model_id.to_owned(), seed: s },
            })
        })
        .collect()
}
