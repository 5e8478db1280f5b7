use agf_core::dataset::{augmented_roi, build_phantom_dataset, class_counts, make_folds, pack, DatasetManifest, LesionClass, RoiImage};
use agf_core::imageops::{encode_png, montage, GrayImage};
use agf_core::rng;

use super::{write_pack, Ctx, Dataset, DATASET_MANIFEST, ROIS_FILE};
use crate::args::{AugmentArgs, DatasetArgs, PhantomGenArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

/// Augmentations shown in the preview montage.
const MONTAGE_LIMIT: usize = 64;

pub fn phantom_gen(ctx: &Ctx, a: &PhantomGenArgs) -> CliResult<RunManifest> {
    let out = a.out.clone().unwrap_or_else(|| ctx.data_dir.join("dataset"));
    let mut rec = ctx.recorder("phantom-gen", &out)?;
    let pc = ctx.cfg.phantom_config();
    rec.seed("phantom", pc.seed);
    let ds = build_phantom_dataset(&pc)?;
    let rois = ds.rois();
    let bytes = pack::encode(&rois)?;
    rec.write(ROIS_FILE, &bytes)?;
    let manifest = DatasetManifest::new(&ds, &bytes, None);
    rec.write(DATASET_MANIFEST, manifest.to_json()?.as_bytes())?;
    let patients: std::collections::BTreeSet<&str> = rois.iter().map(|r| r.patient_id.as_str()).collect();
    let c = class_counts(&rois);
    println!("{} ROIs ({} cyst, {} metastasis, {} hemangioma) from {} patients", rois.len(), c[0], c[1], c[2], patients.len());
    println!("wrote {}", out.display());
    rec.finish()
}

pub fn folds(ctx: &Ctx, a: &DatasetArgs) -> CliResult<RunManifest> {
    let dir = ctx.dataset_dir(a);
    let mut rec = ctx.recorder("folds", &dir)?;
    let mut ds = Dataset::load(&mut rec, &dir)?;
    let seed = rng::child_seed(ctx.cfg.seed, "folds", &[]);
    rec.seed("folds", seed);
    let split = make_folds(&ds.rois, ctx.cfg.folds, seed)?;
    for f in 0..split.k {
        let ids = split.test_ids(f);
        let c = class_counts(ds.rois.iter().filter(|r| ids.contains(&r.id.as_str())));
        println!("fold {f}: {} ROIs ({} / {} / {})", ids.len(), c[0], c[1], c[2]);
    }
    ds.manifest.folds = Some(split);
    rec.write(DATASET_MANIFEST, ds.manifest.to_json()?.as_bytes())?;
    rec.finish()
}

pub fn augment(ctx: &Ctx, a: &AugmentArgs) -> CliResult<RunManifest> {
    let dir = ctx.dataset_dir(&a.dataset);
    let mut rec = ctx.recorder("augment", &ctx.out_dir(&a.out, "augment"))?;
    let ds = Dataset::load(&mut rec, &dir)?;
    let mut plan = a.plan.unwrap_or(ctx.cfg.experiment.plan);
    plan.seed = ctx.cfg.seed;
    plan.validate()?;
    rec.seed("plan", plan.seed);
    let ids: Vec<&str> = if a.all {
        ds.rois.iter().map(|r| r.id.as_str()).collect()
    } else if a.rois.is_empty() {
        LesionClass::ALL
            .iter()
            .filter_map(|&c| ds.rois.iter().find(|r| r.class == c).map(|r| r.id.as_str()))
            .collect()
    } else {
        a.rois.iter().map(String::as_str).collect()
    };
    let sources = ds.sources(&ids)?;
    let per_roi = plan.total_per_roi();
    println!(
        "plan {},{},{},{}: {per_roi} augmentations per ROI ({} rotations × {} variants)",
        plan.n_rot,
        plan.n_flip,
        plan.n_trans,
        plan.n_scale,
        plan.n_rot,
        plan.per_rotation()
    );
    let mut out: Vec<RoiImage> = Vec::with_capacity(ids.len() * per_roi);
    for (id, src) in ids.iter().zip(&sources) {
        let parent = ds.rois.iter().find(|r| r.id == *id).expect("source lookup succeeded");
        for i in 0..per_roi {
            out.push(augmented_roi(parent, src, &plan, i)?);
        }
    }
    write_pack(&mut rec, "augmented.agrp", &out)?;
    let preview: Vec<GrayImage> = out.iter().take(MONTAGE_LIMIT.min(per_roi)).map(|r| r.image()).collect();
    if preview.is_empty() {
        return Err(CliError::config("no ROIs selected"));
    }
    rec.write("montage.png", &encode_png(&montage(&preview, 8)?)?)?;
    println!("{} ROIs → {} augmented ROIs in {}", ids.len(), out.len(), rec.out_dir().display());
    rec.finish()
}

