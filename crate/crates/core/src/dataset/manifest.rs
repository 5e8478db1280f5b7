use serde::{Deserialize, Serialize};

use super::{FoldSplit, LesionClass, PhantomConfig, PhantomDataset, PhantomParams};
use crate::error::Result;
use crate::rng::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub patient_id: String,
    pub class: LesionClass,
    pub phantom: PhantomParams,
}

/// Describes a phantom dataset well enough to regenerate every lesion
/// context (needed for augmentation) and to verify the ROI pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: PhantomConfig,
    pub counts: [usize; 3],
    pub rois: Vec<ManifestEntry>,
    pub folds: Option<FoldSplit>,
    /// SHA-256 of the ROI pack bytes.
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn new(ds: &PhantomDataset, pack_bytes: &[u8], folds: Option<FoldSplit>) -> Self {
        let rois: Vec<ManifestEntry> = ds
            .phantoms
            .iter()
            .map(|p| ManifestEntry {
                id: p.roi.id.clone(),
                patient_id: p.roi.patient_id.clone(),
                class: p.roi.class,
                phantom: p.params,
            })
            .collect();
        DatasetManifest {
            seed: ds.config.seed,
            config: ds.config.clone(),
            counts: super::class_counts(ds.phantoms.iter().map(|p| &p.roi)),
            rois,
            folds,
            content_hash: sha256_hex(pack_bytes),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Re-renders the phantom behind entry `i`.
    pub fn regenerate(&self, i: usize) -> Result<super::Phantom> {
        let e = &self.rois[i];
        super::phantom_generate(&e.id, &e.patient_id, e.phantom)
    }
}
