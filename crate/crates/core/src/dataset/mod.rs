//! Lesion ROI records, the phantom stand-in generator, patient-level folds,
//! nested data groups, and the on-disk ROI pack.

mod folds;
mod groups;
mod manifest;
pub mod pack;
mod phantom;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::imageops::{AugmentSource, AugmentationPlan, GrayImage, ROI_SIDE};

pub use folds::{make_folds, FoldSplit};
pub use groups::{build_aug_groups, build_synth_groups, DataGroup, Member};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use phantom::{
    build_phantom_dataset, lesion_stats, phantom_generate, Phantom, PhantomConfig, PhantomDataset, PhantomParams,
    MAX_DIAMETER_MM, MIN_DIAMETER_MM,
};

pub const ROI_PIXELS: usize = ROI_SIDE * ROI_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionClass {
    Cyst,
    Metastasis,
    Hemangioma,
}

impl LesionClass {
    pub const ALL: [LesionClass; 3] = [LesionClass::Cyst, LesionClass::Metastasis, LesionClass::Hemangioma];
    pub const COUNT: usize = 3;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LesionClass::Cyst => "cyst",
            LesionClass::Metastasis => "metastasis",
            LesionClass::Hemangioma => "hemangioma",
        }
    }
}

impl std::fmt::Display for LesionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LesionClass {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s || c.code().to_string() == s)
            .ok_or_else(|| param(format!("unknown lesion class {s:?}")))
    }
}

/// Where an ROI came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Real,
    Augmented { parent: String },
    Synthetic { model: String, seed: u64 },
}

impl Provenance {
    pub fn is_real(&self) -> bool {
        matches!(self, Provenance::Real)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Augmented { .. } => "augmented",
            Provenance::Synthetic { .. } => "synthetic",
        }
    }
}

/// One 64×64 lesion region. Synthetic ROIs carry diameter 0 (unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage {
    pub id: String,
    pub patient_id: String,
    pub class: LesionClass,
    pub diameter_mm: f32,
    pub pixels: Vec<f32>,
    pub provenance: Provenance,
}

impl RoiImage {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(param("ROI id must be non-empty"));
        }
        if self.pixels.len() != ROI_PIXELS {
            return Err(param(format!("ROI {} has {} pixels, expected {ROI_PIXELS}", self.id, self.pixels.len())));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(param(format!("ROI {} has intensity {v} outside [0, 1]", self.id)));
        }
        let sized = !matches!(self.provenance, Provenance::Synthetic { .. });
        if sized && !(MIN_DIAMETER_MM as f32..=MAX_DIAMETER_MM as f32).contains(&self.diameter_mm) {
            return Err(param(format!("ROI {} diameter {} mm out of range", self.id, self.diameter_mm)));
        }
        Ok(())
    }

    pub fn image(&self) -> GrayImage {
        GrayImage::new(ROI_SIDE, ROI_SIDE, self.pixels.clone()).expect("validated ROI")
    }
}

/// Checks that every augmented ROI references a real ROI in `rois`.
pub fn check_parents(rois: &[RoiImage]) -> Result<()> {
    let real: std::collections::HashSet<&str> =
        rois.iter().filter(|r| r.provenance.is_real()).map(|r| r.id.as_str()).collect();
    for r in rois {
        if let Provenance::Augmented { parent } = &r.provenance {
            if !real.contains(parent.as_str()) {
                return Err(param(format!("augmented ROI {} references unknown parent {parent}", r.id)));
            }
        }
    }
    Ok(())
}

/// Number of ROIs of each class.
pub fn class_counts<'a>(rois: impl IntoIterator<Item = &'a RoiImage>) -> [usize; 3] {
    let mut c = [0; 3];
    for r in rois {
        c[r.class.index()] += 1;
    }
    c
}

/// Augmentation `index` of the real ROI `parent`, rendered from its source
/// window. The id is `"{parent}-aug{index:04}"`; patient and diameter are
/// inherited.
pub fn augmented_roi(parent: &RoiImage, source: &AugmentSource, plan: &AugmentationPlan, index: usize) -> Result<RoiImage> {
    if !parent.provenance.is_real() {
        return Err(param(format!("ROI {} is not real and cannot be augmented", parent.id)));
    }
    if source.roi_id != parent.id {
        return Err(param(format!("augmentation source {} does not belong to ROI {}", source.roi_id, parent.id)));
    }
    let img = source.augmentation(plan, index)?;
    Ok(RoiImage {
        id: format!("{}-aug{index:04}", parent.id),
        patient_id: parent.patient_id.clone(),
        class: parent.class,
        diameter_mm: parent.diameter_mm,
        pixels: img.into_pixels(),
        provenance: Provenance::Augmented { parent: parent.id.clone() },
    })
}
