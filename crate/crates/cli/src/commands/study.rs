use std::sync::Mutex;

use agf_core::dataset::{augmented_roi, RoiImage};
use agf_core::evaluation::{extract_features, run_experiment, tsne_embed, Curve, Embedding, Progress};
use agf_core::training::TrainedClassifier;

use super::{json_pretty, load_model, read_pack, Ctx, Dataset};
use crate::args::{ExperimentArgs, TsneArgs};
use crate::error::CliResult;
use crate::manifest::RunManifest;

fn print_curve(curve: &Curve) {
    for arm in &curve.arms {
        println!("{} arm (base +{} per fold):", arm.name, arm.base_added);
        println!("  {:>5} {:>9} {:>9} {:>9} {:>9}", "group", "added", "accuracy", "w.sens", "w.spec");
        for p in &arm.points {
            let r = &p.result.report;
            println!(
                "  {:>5} {:>9} {:>8.1}% {:>8.1}% {:>8.1}%",
                p.group_index,
                p.per_fold_added,
                100.0 * r.total_accuracy,
                100.0 * r.weighted_sensitivity,
                100.0 * r.weighted_specificity
            );
        }
    }
    let o = &curve.optimal;
    println!("optimal classic group: {} (+{} per fold, {:.1}%)", o.group_index, o.per_fold_added, 100.0 * o.total_accuracy);
}

pub fn experiment(ctx: &Ctx, a: &ExperimentArgs) -> CliResult<RunManifest> {
    let mut rec = ctx.recorder("experiment", &ctx.out_dir(&a.out, "experiment"))?;
    let ds = Dataset::load(&mut rec, &ctx.dataset_dir(&a.dataset))?;
    let folds = ds.folds()?.clone();
    let ids: Vec<&str> = ds.rois.iter().map(|r| r.id.as_str()).collect();
    let sources = ds.sources(&ids)?;
    let cfg = &ctx.cfg.experiment;
    rec.seed("experiment", cfg.seed);
    let cells = (cfg.classic_sizes.len() + cfg.synthetic_sizes.len()) * folds.k;
    let done = Mutex::new(0usize);
    let progress = |p: Progress<'_>| match p {
        Progress::Cell { arm, group, fold, result } => {
            let mut d = done.lock().expect("progress counter");
            *d += 1;
            eprintln!(
                "[{:>3}/{cells}] {arm:<9} group {group} fold {fold}: {} training ROIs, {}/{} correct",
                *d,
                result.train_size,
                (0..3).map(|c| result.confusion.counts[c][c]).sum::<u64>(),
                result.confusion.total()
            );
        }
        Progress::Optimal(o) => eprintln!("optimal classic group {} (+{} per fold)", o.group_index, o.per_fold_added),
        Progress::Generator(g) => eprintln!("DCGAN fold {} {}: trained on {} ROIs", g.fold, g.class.name(), g.training_images),
    };
    let curve = run_experiment(cfg, &ds.rois, &sources, &folds, ctx.jobs, &progress)?;
    rec.write("curve.json", curve.to_json()?.as_bytes())?;
    print_curve(&curve);
    rec.finish()
}

pub fn tsne(ctx: &Ctx, a: &TsneArgs) -> CliResult<RunManifest> {
    let mut rec = ctx.recorder("tsne", &ctx.out_dir(&a.out, "tsne"))?;
    let (model, records, _) = load_model(&mut rec, &a.checkpoint)?;
    let clf = TrainedClassifier::from_records(model, &records)?;
    let ds = Dataset::load(&mut rec, &ctx.dataset_dir(&a.dataset))?;
    let (_, test) = ds.split(a.fold.fold)?;
    let mut plan = ctx.cfg.experiment.plan;
    plan.seed = ctx.cfg.seed;
    let per_roi = plan.total_per_roi();
    let ids: Vec<&str> = test.iter().map(|r| r.id.as_str()).collect();
    let mut rois: Vec<RoiImage> = test.clone();
    if a.augmentations > 0 {
        let sources = ds.sources(&ids)?;
        for (parent, src) in test.iter().zip(&sources) {
            // Evenly spaced through the plan, so rotations, flips,
            // translations and rescales are all represented.
            for k in 0..a.augmentations.min(per_roi) {
                rois.push(augmented_roi(parent, src, &plan, k * per_roi / a.augmentations.min(per_roi))?);
            }
        }
    }
    for p in &a.synthetic {
        rois.extend(read_pack(&mut rec, p)?);
    }
    rec.seed("tsne", ctx.cfg.tsne.seed);
    let features: Vec<Vec<f64>> = extract_features(&clf.model, &clf.mean, &rois)?
        .into_iter()
        .map(|f| f.into_iter().map(f64::from).collect())
        .collect();
    eprintln!("embedding {} ROIs ({} features each)", rois.len(), features.first().map_or(0, Vec::len));
    let result = tsne_embed(&features, &ctx.cfg.tsne)?;
    let emb = Embedding::new(&result, &rois)?;
    rec.write("embedding.json", emb.to_json()?.as_bytes())?;
    rec.write("embedding.png", &emb.render_png(a.plot_size)?)?;
    rec.write("tsne_summary.json", &json_pretty(&serde_json::json!({
        "points": rois.len(),
        "kl": result.kl,
        "max_entropy_error": result.max_entropy_error,
        "backtracked_iterations": result.backtracked,
    })))?;
    println!("{} points, final KL {:.4}, max entropy error {:.2e}", rois.len(), result.kl, result.max_entropy_error);
    rec.finish()
}
