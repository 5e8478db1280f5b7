//! Procedural lesion phantoms standing in for contoured CT lesions.
//!
//! Each phantom is a textured parenchyma patch with one lesion at its center.
//! Intensities live in a fixed display window (parenchyma ≈ 0.55), so class
//! contrast survives without per-image normalization:
//!
//! * cyst — homogeneous dark disk (≈ 0.2) with a sharp rim;
//! * metastasis — mid-dark (≈ 0.38) speckled blob with a blurred margin;
//! * hemangioma — dark interior (≈ 0.3) with discontinuous bright nodules
//!   along the periphery.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LesionClass, Provenance, RoiImage};
use crate::error::{param, Result};
use crate::imageops::{AugmentSource, BoundingBox, GrayImage};
use crate::rng;

pub const MIN_DIAMETER_MM: f64 = 10.0;
pub const MAX_DIAMETER_MM: f64 = 102.0;
/// Display-window limits; phantoms never saturate.
const LOW: f32 = 0.02;
const HIGH: f32 = 0.98;

/// Everything that determines one phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub class: LesionClass,
    pub diameter_mm: f64,
    pub seed: u64,
    pub px_per_mm: f64,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub roi: RoiImage,
    pub source: AugmentSource,
    pub params: PhantomParams,
}

struct Shape {
    radius: f64,
    harmonics: [(f64, f64); 2],
}

impl Shape {
    fn boundary(&self, phi: f64) -> f64 {
        let [(a2, p2), (a3, p3)] = self.harmonics;
        self.radius * (1.0 + a2 * (2.0 * phi + p2).cos() + a3 * (3.0 * phi + p3).cos())
    }

    fn max_radius(&self) -> f64 {
        self.radius * (1.0 + self.harmonics[0].0 + self.harmonics[1].0)
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders one phantom lesion and its tissue context.
pub fn phantom_generate(id: &str, patient_id: &str, params: PhantomParams) -> Result<Phantom> {
    let PhantomParams { class, diameter_mm, seed, px_per_mm } = params;
    if !(MIN_DIAMETER_MM..=MAX_DIAMETER_MM).contains(&diameter_mm) {
        return Err(param(format!("diameter {diameter_mm} mm outside [{MIN_DIAMETER_MM}, {MAX_DIAMETER_MM}]")));
    }
    if !(px_per_mm > 0.0 && px_per_mm <= 4.0) {
        return Err(param(format!("px_per_mm {px_per_mm} outside (0, 4]")));
    }
    let mut r = rng::stream(seed, "phantom", &[class.code() as u64]);
    let diameter_px = diameter_mm * px_per_mm;
    let side = (2.8 * diameter_px).ceil() as usize + 8;
    let c = side as f64 / 2.0;
    let shape = Shape {
        radius: diameter_px / 2.0,
        harmonics: [
            (r.random_range(0.0..0.08), r.random_range(0.0..2.0 * PI)),
            (r.random_range(0.0..0.05), r.random_range(0.0..2.0 * PI)),
        ],
    };

    // Low-frequency parenchyma texture: a few random plane waves.
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let period = r.random_range(6.0..24.0) * px_per_mm;
            let dir = r.random_range(0.0..2.0 * PI);
            (2.0 * PI / period * dir.cos(), 2.0 * PI / period * dir.sin(), r.random_range(0.0..2.0 * PI), r.random_range(0.005..0.02))
        })
        .collect();
    let background = r.random_range(0.52..0.58);
    let nodules: Vec<(f64, f64)> = if class == LesionClass::Hemangioma {
        let count = r.random_range(7..=12);
        let step = 2.0 * PI / count as f64;
        let start = r.random_range(0.0..step);
        let mut nodules = Vec::new();
        for k in 0..count {
            let jitter = r.random_range(-0.2..0.2);
            let size = r.random_range(0.12..0.18);
            // Discontinuous rim: some nodules are missing.
            if r.random_bool(0.8) {
                nodules.push((start + (k as f64 + jitter) * step, size));
            }
        }
        nodules
    } else {
        Vec::new()
    };
    let pixel_noise = Normal::new(0.0, 0.015).expect("valid sigma");
    let speckle = Normal::new(0.0, 0.07).expect("valid sigma");
    let interior = match class {
        LesionClass::Cyst => r.random_range(0.17..0.23),
        LesionClass::Metastasis => r.random_range(0.35..0.41),
        LesionClass::Hemangioma => r.random_range(0.27..0.33),
    };

    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dy, dx) = (y as f64 + 0.5 - c, x as f64 + 0.5 - c);
            let dist = dy.hypot(dx);
            let phi = dy.atan2(dx);
            let rb = shape.boundary(phi);
            let tissue: f64 = background
                + waves.iter().map(|&(kx, ky, ph, amp)| amp * (kx * x as f64 + ky * y as f64 + ph).sin()).sum::<f64>();
            let v = match class {
                LesionClass::Cyst => {
                    let inside = 1.0 - smoothstep(rb - 0.6, rb + 0.6, dist);
                    tissue + (interior - tissue) * inside
                }
                LesionClass::Metastasis => {
                    let inside = 1.0 - smoothstep(rb * 0.8, rb * 1.15, dist);
                    let body = interior + speckle.sample(&mut r);
                    tissue + (body - tissue) * inside
                }
                LesionClass::Hemangioma => {
                    let inside = 1.0 - smoothstep(rb - 1.0, rb + 1.0, dist);
                    let mut v = tissue + (interior - tissue) * inside;
                    for &(angle, size) in &nodules {
                        let ny = c + 0.82 * rb * angle.sin();
                        let nx = c + 0.82 * rb * angle.cos();
                        let nr = size * 2.0 * shape.radius;
                        let d = (y as f64 + 0.5 - ny).hypot(x as f64 + 0.5 - nx);
                        v += (0.88 - v) * (1.0 - smoothstep(nr * 0.6, nr, d));
                    }
                    v
                }
            };
            pixels.push(((v + pixel_noise.sample(&mut r)) as f32).clamp(LOW, HIGH));
        }
    }
    let context = GrayImage::new(side, side, pixels)?;
    let reach = shape.max_radius().ceil() as usize + 1;
    let ci = side / 2;
    let lesion = BoundingBox { x0: ci - reach, y0: ci - reach, x1: ci + reach, y1: ci + reach };
    let source = AugmentSource {
        roi_id: id.to_owned(),
        context,
        lesion,
        diameter_mm,
        diameter_px,
    };
    let base = source.base_roi()?;
    let roi = RoiImage {
        id: id.to_owned(),
        patient_id: patient_id.to_owned(),
        class,
        diameter_mm: diameter_mm as f32,
        pixels: base.into_pixels(),
        provenance: Provenance::Real,
    };
    Ok(Phantom { roi, source, params })
}

/// Mean intensity of the lesion interior (radius < 0.5 of the nominal
/// radius) and of the rim band (0.7–0.95), measured on the 64×64 ROI.
pub fn lesion_stats(p: &Phantom) -> (f64, f64) {
    let img = p.roi.image();
    let side = img.height() as f64;
    let margin = crate::imageops::DEFAULT_MARGIN_FRACTION * p.source.diameter_px;
    let crop = (p.source.lesion.width() as f64 + 2.0 * margin).round();
    let radius = p.source.diameter_px / 2.0 * side / crop;
    let (mut inner, mut ni, mut rim, mut nr) = (0.0, 0, 0.0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let d = (y as f64 + 0.5 - side / 2.0).hypot(x as f64 + 0.5 - side / 2.0) / radius;
            let v = img.get(y, x) as f64;
            if d < 0.5 {
                inner += v;
                ni += 1;
            } else if (0.7..0.95).contains(&d) {
                rim += v;
                nr += 1;
            }
        }
    }
    (inner / ni.max(1) as f64, rim / nr.max(1) as f64)
}

/// Size and composition of a phantom dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    /// ROIs per class, in class-code order.
    pub counts: [usize; 3],
    /// Fraction of patients owning two lesions of the same class.
    pub two_lesion_fraction: f64,
    pub px_per_mm: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { counts: [53, 64, 65], two_lesion_fraction: 0.1, px_per_mm: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomDataset {
    pub phantoms: Vec<Phantom>,
    pub config: PhantomConfig,
}

impl PhantomDataset {
    pub fn rois(&self) -> Vec<RoiImage> {
        self.phantoms.iter().map(|p| p.roi.clone()).collect()
    }
}

/// Renders `counts` phantoms with log-uniform diameters and patient ids.
pub fn build_phantom_dataset(config: &PhantomConfig) -> Result<PhantomDataset> {
    if config.counts.iter().any(|&c| c < 3) {
        return Err(param(format!("need at least 3 ROIs per class, got {:?}", config.counts)));
    }
    if !(0.0..=1.0).contains(&config.two_lesion_fraction) {
        return Err(param(format!("two_lesion_fraction {} outside [0, 1]", config.two_lesion_fraction)));
    }
    let mut phantoms = Vec::new();
    let mut next_id = 0usize;
    for class in LesionClass::ALL {
        let n = config.counts[class.index()];
        // n = patients + doubles with doubles ≈ f·patients, keeping ≥ 3 patients.
        let f = config.two_lesion_fraction;
        let doubles = ((n as f64 * f / (1.0 + f)).round() as usize).min(n - 3).min(n / 2);
        let patients = n - doubles;
        let mut owners: Vec<usize> = (0..patients).collect();
        let mut r = rng::stream(config.seed, "patients", &[class.code() as u64]);
        let mut extra: Vec<usize> = (0..patients).collect();
        extra.shuffle(&mut r);
        owners.extend_from_slice(&extra[..doubles]);
        owners.sort_unstable();
        for owner in owners {
            let id = format!("roi-{next_id:04}");
            let seed = rng::child_seed(config.seed, "phantom-seed", &[next_id as u64]);
            let mut dr = rng::stream(config.seed, "diameter", &[next_id as u64]);
            let diameter_mm = (dr.random_range(MIN_DIAMETER_MM.ln()..=MAX_DIAMETER_MM.ln())).exp();
            let patient = format!("{}-p{owner:03}", class.name());
            let params = PhantomParams { class, diameter_mm, seed, px_per_mm: config.px_per_mm };
            phantoms.push(phantom_generate(&id, &patient, params)?);
            next_id += 1;
        }
    }
    Ok(PhantomDataset { phantoms, config: config.clone() })
}
