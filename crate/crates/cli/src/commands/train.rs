use agf_core::dataset::{LesionClass, RoiImage};
use agf_core::evaluation::{check_leakage, confusion, MetricsReport};
use agf_core::imageops::{encode_png, montage, GrayImage};
use agf_core::models::{
    build_acgan_discriminator, build_acgan_generator, build_classifier, build_dcgan_discriminator, build_dcgan_generator, InputSpec,
};
use agf_core::rng;
use agf_core::training::{generate, predict, synthesize, AcganTrainer, ClassifierTrainer, DcganTrainer, TrainConfig, TrainedClassifier};
use serde_json::json;

use super::{argmax, json_pretty, load_model, read_pack, save_model, write_pack, Ctx, Dataset};
use crate::args::{EvaluateArgs, SynthArgs, TrainAcganArgs, TrainClfArgs, TrainDcganArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{Recorder, RunManifest};

/// Samples in the preview montage written next to a generator.
const PREVIEW: usize = 16;

/// Training-fold real ROIs plus any extra packs, leakage-checked against
/// the held-out fold.
fn training_pool(rec: &mut Recorder, ds: &Dataset, fold: usize, extra: &[std::path::PathBuf]) -> CliResult<(Vec<RoiImage>, Vec<RoiImage>)> {
    let (mut train, test) = ds.split(fold)?;
    for p in extra {
        train.extend(read_pack(rec, p)?);
    }
    check_leakage(&train, &test)?;
    Ok((train, test))
}

fn print_report(title: &str, m: &MetricsReport) {
    println!("{title}: total accuracy {:.1}%", 100.0 * m.total_accuracy);
    for r in &m.per_class {
        println!("  {:<11} sensitivity {:5.1}%  specificity {:5.1}%", r.class.name(), 100.0 * r.sensitivity, 100.0 * r.specificity);
    }
    println!("  weighted    sensitivity {:5.1}%  specificity {:5.1}%", 100.0 * m.weighted_sensitivity, 100.0 * m.weighted_specificity);
}

fn score(trained: &TrainedClassifier, rois: &[RoiImage], folds: Vec<usize>) -> CliResult<MetricsReport> {
    let probs = predict(&trained.model, &trained.mean, rois)?;
    let pred: Vec<LesionClass> = probs.iter().map(argmax).collect();
    let truth: Vec<LesionClass> = rois.iter().map(|r| r.class).collect();
    Ok(MetricsReport::from_confusion(confusion(&pred, &truth)?, 0, folds)?)
}

pub fn train_clf(ctx: &Ctx, a: &TrainClfArgs) -> CliResult<RunManifest> {
    let fold = a.fold.fold;
    let mut rec = ctx.recorder("train-clf", &ctx.out_dir(&a.out, "train-clf"))?;
    let ds = Dataset::load(&mut rec, &ctx.dataset_dir(&a.dataset))?;
    let (train, test) = training_pool(&mut rec, &ds, fold, &a.extra)?;
    let e = &ctx.cfg.experiment;
    let cfg = TrainConfig { seed: rng::child_seed(ctx.cfg.seed, "train-clf", &[fold as u64]), ..e.classifier.clone() };
    rec.seed("classifier", cfg.seed);
    let spec = build_classifier(&e.classifier_arch)?;
    eprintln!("training {} ({} parameters) on {} ROIs, testing on fold {fold} ({} ROIs)", spec.name, spec.param_count(), train.len(), test.len());
    let trained = ClassifierTrainer::new(&spec, &train, &cfg)?.train(&train, None, |r, _| {
        eprintln!("epoch {:>3}  loss {:.4}  train accuracy {:.3}", r.epoch, r.loss.unwrap_or(f64::NAN), r.train_accuracy.unwrap_or(f64::NAN));
        Ok(())
    })?;
    let training = json!({ "command": "train-clf", "fold": fold, "train_size": train.len(), "config": cfg, "arch": e.classifier_arch });
    save_model(&mut rec, "classifier.agfp", &trained.model, &[trained.mean_record()], training)?;
    rec.write_volatile("train_log.jsonl", trained.log.to_jsonl().as_bytes())?;
    let report = score(&trained, &test, vec![fold])?;
    rec.write("metrics.json", &json_pretty(&report))?;
    print_report(&format!("fold {fold}"), &report);
    rec.finish()
}

fn preview(rec: &mut Recorder, samples: Vec<(u64, GrayImage)>, name: &str) -> CliResult<()> {
    let imgs: Vec<GrayImage> = samples.into_iter().map(|(_, i)| i).collect();
    rec.write(name, &encode_png(&montage(&imgs, 4)?)?)?;
    Ok(())
}

pub fn train_dcgan(ctx: &Ctx, a: &TrainDcganArgs) -> CliResult<RunManifest> {
    let (fold, class) = (a.fold.fold, a.class);
    let mut rec = ctx.recorder("train-dcgan", &ctx.out_dir(&a.out, "train-dcgan"))?;
    let ds = Dataset::load(&mut rec, &ctx.dataset_dir(&a.dataset))?;
    let (train, _) = training_pool(&mut rec, &ds, fold, &a.extra)?;
    let images: Vec<Vec<f32>> = train.iter().filter(|r| r.class == class).map(|r| r.pixels.clone()).collect();
    let e = &ctx.cfg.experiment;
    let cfg = TrainConfig { seed: rng::child_seed(ctx.cfg.seed, "train-dcgan", &[fold as u64, class.code() as u64]), ..e.gan.clone() };
    rec.seed("dcgan", cfg.seed);
    let (g, d) = (build_dcgan_generator(&e.gan_arch)?, build_dcgan_discriminator(&e.gan_arch)?);
    eprintln!("training DCGAN on {} {} ROIs", images.len(), class.name());
    let out = DcganTrainer::new(&g, &d, &cfg)?.train(&images, |r, _| {
        eprintln!("epoch {:>3}  D {:.4}  G {:.4}", r.epoch, r.d_loss.unwrap_or(f64::NAN), r.g_loss.unwrap_or(f64::NAN));
        Ok(())
    })?;
    let training = json!({ "command": "train-dcgan", "fold": fold, "class": class, "train_size": images.len(), "config": cfg, "arch": e.gan_arch });
    save_model(&mut rec, "generator.agfp", &out.generator, &[], training.clone())?;
    save_model(&mut rec, "discriminator.agfp", &out.discriminator, &[], training)?;
    rec.write_volatile("train_log.jsonl", out.log.to_jsonl().as_bytes())?;
    preview(&mut rec, generate(&out.generator, None, PREVIEW, cfg.seed, cfg.noise)?, "samples.png")?;
    println!("generator {}", out.generator.digest());
    rec.finish()
}

pub fn train_acgan(ctx: &Ctx, a: &TrainAcganArgs) -> CliResult<RunManifest> {
    let fold = a.fold.fold;
    let mut rec = ctx.recorder("train-acgan", &ctx.out_dir(&a.out, "train-acgan"))?;
    let ds = Dataset::load(&mut rec, &ctx.dataset_dir(&a.dataset))?;
    let (train, _) = ds.split(fold)?;
    let s = &ctx.cfg.acgan;
    let cfg = TrainConfig { seed: rng::child_seed(ctx.cfg.seed, "train-acgan", &[fold as u64]), ..s.train.clone() };
    rec.seed("acgan", cfg.seed);
    let (g, d) = (build_acgan_generator(&s.arch, s.conditioning)?, build_acgan_discriminator(&s.arch)?);
    let images: Vec<Vec<f32>> = train.iter().map(|r| r.pixels.clone()).collect();
    let labels: Vec<LesionClass> = train.iter().map(|r| r.class).collect();
    eprintln!("training ACGAN on {} ROIs", images.len());
    let out = AcganTrainer::new(&g, &d, &cfg)?.train(&images, &labels, |r, _| {
        eprintln!(
            "epoch {:>3}  D {:.4}  G {:.4}  class accuracy {:.3}",
            r.epoch,
            r.d_loss.unwrap_or(f64::NAN),
            r.g_loss.unwrap_or(f64::NAN),
            r.class_accuracy.unwrap_or(f64::NAN)
        );
        Ok(())
    })?;
    let training = json!({ "command": "train-acgan", "fold": fold, "train_size": images.len(), "config": cfg, "arch": s.arch, "conditioning": s.conditioning });
    save_model(&mut rec, "generator.agfp", &out.generator, &[], training.clone())?;
    save_model(&mut rec, "discriminator.agfp", &out.discriminator, &[], training)?;
    rec.write_volatile("train_log.jsonl", out.log.to_jsonl().as_bytes())?;
    let mut samples = Vec::new();
    for c in LesionClass::ALL {
        samples.extend(generate(&out.generator, Some(c), PREVIEW / 4, cfg.seed, cfg.noise)?);
    }
    preview(&mut rec, samples, "samples.png")?;
    println!("generator {}", out.generator.digest());
    rec.finish()
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> CliResult<RunManifest> {
    let mut rec = ctx.recorder("synth", &ctx.out_dir(&a.out, "synth"))?;
    let (generator, _, meta) = load_model(&mut rec, &a.generator)?;
    let conditioned = match &generator.spec.input {
        InputSpec::Noise { conditioning, .. } => conditioning.is_some(),
        _ => return Err(CliError::data(format!("{} is not a generator checkpoint", a.generator.display()))),
    };
    if !conditioned {
        if let Some(trained) = meta.training.get("class").and_then(|c| serde_json::from_value::<LesionClass>(c.clone()).ok()) {
            if trained != a.class {
                return Err(CliError::config(format!("this DCGAN was trained on {trained}, not {}", a.class)));
            }
        }
    }
    let seed = rng::child_seed(ctx.cfg.seed, "synth", &[a.class.code() as u64]);
    rec.seed("synth", seed);
    let model_id = format!("{}-{}", generator.spec.name, &meta.checkpoint_sha256[..12]);
    let rois = synthesize(&generator, &model_id, a.class, conditioned, a.count, seed, ctx.cfg.experiment.gan.noise)?;
    write_pack(&mut rec, "synthetic.agrp", &rois)?;
    let preview: Vec<GrayImage> = rois.iter().take(PREVIEW).map(|r| r.image()).collect();
    rec.write("montage.png", &encode_png(&montage(&preview, 4)?)?)?;
    println!("{} synthetic {} ROIs from {model_id}", rois.len(), a.class.name());
    rec.finish()
}

pub fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> CliResult<RunManifest> {
    let mut rec = ctx.recorder("evaluate", &ctx.out_dir(&a.out, "evaluate"))?;
    let (model, records, _) = load_model(&mut rec, &a.checkpoint)?;
    let trained = TrainedClassifier::from_records(model, &records)?;
    let (rois, folds, title) = match &a.pack {
        Some(p) => (read_pack(&mut rec, p)?, Vec::new(), p.display().to_string()),
        None => {
            let ds = Dataset::load(&mut rec, &ctx.dataset_dir(&a.dataset))?;
            (ds.split(a.fold.fold)?.1, vec![a.fold.fold], format!("fold {}", a.fold.fold))
        }
    };
    let report = score(&trained, &rois, folds)?;
    rec.write("metrics.json", &json_pretty(&report))?;
    print_report(&title, &report);
    rec.finish()
}
