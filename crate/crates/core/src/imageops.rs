//! Geometry and intensity operations on single-channel images, and the
//! classic augmentation expansion built from them.
//!
//! Out-of-bounds samples replicate the nearest edge pixel. Flips and integer
//! translations are exact permutations; rotation is bilinear and resizing is
//! Catmull-Rom bicubic, both clamped to the input's intensity range.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng;

/// Side of the network input.
pub const ROI_SIDE: usize = 64;
/// Margin around the lesion of an un-rescaled ROI, as a fraction of its diameter.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.25;
pub const MIN_MARGIN_FRACTION: f64 = 0.1;
pub const MAX_MARGIN_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(param(format!("{height}×{width} image cannot hold {} pixels", pixels.len())));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(param(format!("non-finite intensity {bad}")));
        }
        Ok(GrayImage { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        GrayImage::new(height, width, vec![value; height * width]).expect("positive size")
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let pixels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        GrayImage::new(height, width, pixels).expect("finite generator")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    fn clamped(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    fn bilinear(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as isize, x.floor() as isize);
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let p = |dy: isize, dx: isize| self.clamped(y0 + dy, x0 + dx) as f64;
        (1.0 - fy) * ((1.0 - fx) * p(0, 0) + fx * p(0, 1)) + fy * ((1.0 - fx) * p(1, 0) + fx * p(1, 1))
    }
}

/// Axis-aligned lesion bounding box; `x1`/`y1` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.y0 + self.y1) as f64 / 2.0, (self.x0 + self.x1) as f64 / 2.0)
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// Rotation by `theta_degrees` about the image center.
pub fn rotate(img: &GrayImage, theta_degrees: f64) -> GrayImage {
    let cy = (img.height - 1) as f64 / 2.0;
    let cx = (img.width - 1) as f64 / 2.0;
    rotated_window(img, (cy, cx), theta_degrees, img.height, img.width)
}

/// The `height×width` window centered on `center` (pixel coordinates) of
/// `img` rotated by `theta_degrees` about that center.
pub fn rotated_window(img: &GrayImage, center: (f64, f64), theta_degrees: f64, height: usize, width: usize) -> GrayImage {
    let (s, c) = theta_degrees.to_radians().sin_cos();
    let (lo, hi) = img.min_max();
    let oy = (height - 1) as f64 / 2.0;
    let ox = (width - 1) as f64 / 2.0;
    GrayImage::from_fn(height, width, |y, x| {
        let (dy, dx) = (y as f64 - oy, x as f64 - ox);
        // inverse map: output offset rotated by −θ
        let sy = center.0 + c * dy - s * dx;
        let sx = center.1 + s * dy + c * dx;
        (img.bilinear(sy, sx) as f32).clamp(lo, hi)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipAxis {
    /// Up-down.
    Vertical,
    /// Left-right.
    Horizontal,
    Both,
}

impl FlipAxis {
    pub const ALL: [FlipAxis; 3] = [FlipAxis::Vertical, FlipAxis::Horizontal, FlipAxis::Both];
}

pub fn flip(img: &GrayImage, axis: FlipAxis) -> GrayImage {
    let (h, w) = (img.height, img.width);
    let (fy, fx) = match axis {
        FlipAxis::Vertical => (true, false),
        FlipAxis::Horizontal => (false, true),
        FlipAxis::Both => (true, true),
    };
    GrayImage::from_fn(h, w, |y, x| {
        img.get(if fy { h - 1 - y } else { y }, if fx { w - 1 - x } else { x })
    })
}

/// Integer shift; output pixel `(y, x)` reads input `(y − dy, x − dx)`.
pub fn translate(img: &GrayImage, dx: i32, dy: i32) -> Result<GrayImage> {
    let limit = img.height.min(img.width) as i64;
    if (dx as i64).abs() >= limit || (dy as i64).abs() >= limit {
        return Err(param(format!("shift ({dx}, {dy}) exceeds image bounds {}×{}", img.height, img.width)));
    }
    Ok(GrayImage::from_fn(img.height, img.width, |y, x| {
        img.clamped(y as isize - dy as isize, x as isize - dx as isize)
    }))
}

/// Maximum translation `p = min(4, 0.1·d)` for a lesion of diameter `d`.
pub fn translation_bound(diameter: f64) -> f64 {
    (0.1 * diameter).min(4.0)
}

/// Square window around the lesion box expanded by `margin` pixels per side,
/// shifted as needed to stay inside the source.
pub fn rescale_margin(src: &GrayImage, lesion: &BoundingBox, margin: f64) -> Result<GrayImage> {
    let window = margin_window(src.height, src.width, lesion, margin)?;
    Ok(GrayImage::from_fn(window.height(), window.width(), |y, x| src.get(window.y0 + y, window.x0 + x)))
}

/// Placement of the [`rescale_margin`] window within a `height×width` source.
pub fn margin_window(height: usize, width: usize, lesion: &BoundingBox, margin: f64) -> Result<BoundingBox> {
    if lesion.width() == 0 || lesion.height() == 0 || lesion.x1 > width || lesion.y1 > height {
        return Err(Error::Extraction(format!("lesion box {lesion:?} outside {height}×{width} source")));
    }
    if !(margin >= 0.0) {
        return Err(param(format!("margin {margin} must be non-negative")));
    }
    let core = lesion.width().max(lesion.height());
    if core > height.min(width) {
        return Err(Error::Extraction(format!("lesion box {lesion:?} larger than {height}×{width} source")));
    }
    let side = ((core as f64 + 2.0 * margin).round() as usize).min(height.min(width)).max(core);
    let place = |lo: usize, hi: usize, extent: usize| -> usize {
        let c = (lo + hi) as f64 / 2.0;
        let start = (c - side as f64 / 2.0).round().max(0.0) as usize;
        start.min(extent - side).min(lo).max(hi.saturating_sub(side))
    };
    let y0 = place(lesion.y0, lesion.y1, height);
    let x0 = place(lesion.x0, lesion.x1, width);
    Ok(BoundingBox { x0, y0, x1: x0 + side, y1: y0 + side })
}

fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample source indices and weights along one axis.
fn cubic_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = (o as f64 + 0.5) * scale - 0.5;
            let base = pos.floor();
            let frac = pos - base;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let off = k as f64 - 1.0;
                idx[k] = ((base + off) as isize).clamp(0, src as isize - 1) as usize;
                w[k] = catmull_rom(frac - off);
            }
            (idx, w)
        })
        .collect()
}

/// Catmull-Rom bicubic resampling with pixel-center alignment.
pub fn resize_bicubic(img: &GrayImage, height: usize, width: usize) -> Result<GrayImage> {
    if img.height < 4 || img.width < 4 {
        return Err(param(format!("bicubic source must be at least 4×4, got {}×{}", img.height, img.width)));
    }
    if height == 0 || width == 0 {
        return Err(param("target size must be positive"));
    }
    let (lo, hi) = img.min_max();
    let xt = cubic_taps(img.width, width);
    let yt = cubic_taps(img.height, height);
    let mut rows = vec![0f64; img.height * width];
    for y in 0..img.height {
        let line = &img.pixels[y * img.width..(y + 1) * img.width];
        for (x, (idx, w)) in xt.iter().enumerate() {
            rows[y * width + x] = (0..4).map(|k| w[k] * line[idx[k]] as f64).sum();
        }
    }
    let mut out = Vec::with_capacity(height * width);
    for (idx, w) in &yt {
        for x in 0..width {
            let v: f64 = (0..4).map(|k| w[k] * rows[idx[k] * width + x]).sum();
            out.push((v as f32).clamp(lo, hi));
        }
    }
    GrayImage::new(height, width, out)
}

/// Affine min→0, max→1; a constant image maps to 0.5.
pub fn intensity_rescale(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    if hi <= lo {
        return GrayImage::filled(img.height, img.width, 0.5);
    }
    let span = hi as f64 - lo as f64;
    let pixels = img.pixels.iter().map(|&v| ((v as f64 - lo as f64) / span) as f32).collect();
    GrayImage { height: img.height, width: img.width, pixels }
}

/// `x ↦ 2x − 1`, from `[0, 1]` to the tanh range.
pub fn to_tanh_range(v: f32) -> f32 {
    2.0 * v - 1.0
}

/// Inverse of [`to_tanh_range`].
pub fn from_tanh_range(v: f32) -> f32 {
    (v + 1.0) / 2.0
}

/// 8-bit grayscale PNG of an image with intensities in `[0, 1]`
/// (values outside are clipped; display-only quantization).
pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = img.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let mut w = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_image_data(&bytes).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

/// Tiles equally sized images into a grid with `columns` per row.
pub fn montage(images: &[GrayImage], columns: usize) -> Result<GrayImage> {
    let first = images.first().ok_or_else(|| param("montage of zero images"))?;
    let (h, w) = (first.height, first.width);
    if images.iter().any(|i| i.height != h || i.width != w) {
        return Err(param("montage images differ in size"));
    }
    let columns = columns.clamp(1, images.len());
    let rows = images.len().div_ceil(columns);
    Ok(GrayImage::from_fn(rows * h, columns * w, |y, x| {
        images.get((y / h) * columns + x / w).map_or(0.0, |i| i.get(y % h, x % w))
    }))
}

/// Counts of each transform in the classic augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPlan {
    pub n_rot: usize,
    pub n_flip: usize,
    pub n_trans: usize,
    pub n_scale: usize,
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn new(n_rot: usize, n_flip: usize, n_trans: usize, n_scale: usize, seed: u64) -> Result<Self> {
        let plan = AugmentationPlan { n_rot, n_flip, n_trans, n_scale, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_flip > 3 {
            return Err(param(format!("n_flip = {} but only 3 distinct flips exist", self.n_flip)));
        }
        if self.n_rot == 0 {
            return Err(param("n_rot must be at least 1"));
        }
        Ok(())
    }

    /// Images derived from each rotation: the rotation itself plus its flips,
    /// translations and rescales.
    pub fn per_rotation(&self) -> usize {
        1 + self.n_flip + self.n_trans + self.n_scale
    }

    /// `N = n_rot × (1 + n_flip + n_trans + n_scale)`.
    pub fn total_per_roi(&self) -> usize {
        self.n_rot * self.per_rotation()
    }
}

impl std::str::FromStr for AugmentationPlan {
    type Err = Error;

    /// Parses `"rot,flip,trans,scale"` with seed 0.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| param(format!("bad plan component {p:?}"))))
            .collect::<Result<_>>()?;
        match parts[..] {
            [r, f, t, sc] => AugmentationPlan::new(r, f, t, sc, 0),
            _ => Err(param(format!("plan {s:?} must have 4 comma-separated counts"))),
        }
    }
}

/// Everything needed to derive augmentations of one lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSource {
    pub roi_id: String,
    /// Tissue window around the lesion, large enough to rotate and re-crop.
    pub context: GrayImage,
    pub lesion: BoundingBox,
    pub diameter_mm: f64,
    /// Lesion diameter in context pixels.
    pub diameter_px: f64,
}

/// What a single augmentation index expands to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AugmentationStep {
    Rotation { theta: f64 },
    Flip { theta: f64, axis: FlipAxis },
    Translation { theta: f64, dx: i32, dy: i32 },
    Rescale { theta: f64, margin_px: f64 },
}

impl AugmentSource {
    fn key(&self) -> u64 {
        rng::key_of(&self.roi_id)
    }

    fn base_window(&self, theta: f64, margin_px: f64) -> Result<GrayImage> {
        let side_box = self.lesion.width().max(self.lesion.height());
        let side = (side_box as f64 + 2.0 * margin_px).round().max(4.0) as usize;
        let (cy, cx) = self.lesion.center();
        // Box centers sit between pixels: shift to pixel coordinates.
        let crop = rotated_window(&self.context, (cy - 0.5, cx - 0.5), theta, side, side);
        resize_bicubic(&crop, ROI_SIDE, ROI_SIDE)
    }

    /// The un-augmented 64×64 ROI.
    pub fn base_roi(&self) -> Result<GrayImage> {
        self.base_window(0.0, DEFAULT_MARGIN_FRACTION * self.diameter_px)
    }

    /// Parameters of augmentation `index` in `[0, plan.total_per_roi())`.
    pub fn step(&self, plan: &AugmentationPlan, index: usize) -> Result<AugmentationStep> {
        plan.validate()?;
        if index >= plan.total_per_roi() {
            return Err(param(format!("augmentation index {index} ≥ N = {}", plan.total_per_roi())));
        }
        let rot = index / plan.per_rotation();
        let sub = index % plan.per_rotation();
        let theta = rng::stream(plan.seed, "rotation", &[self.key(), rot as u64]).random_range(0.0..=180.0);
        let mut r = rng::stream(plan.seed, "augmentation", &[self.key(), index as u64]);
        Ok(if sub == 0 {
            AugmentationStep::Rotation { theta }
        } else if sub <= plan.n_flip {
            AugmentationStep::Flip { theta, axis: FlipAxis::ALL[sub - 1] }
        } else if sub <= plan.n_flip + plan.n_trans {
            let p = translation_bound(self.diameter_mm).floor() as i32;
            AugmentationStep::Translation { theta, dx: r.random_range(-p..=p), dy: r.random_range(-p..=p) }
        } else {
            let lo = MIN_MARGIN_FRACTION * self.diameter_px;
            let hi = MAX_MARGIN_FRACTION * self.diameter_px;
            AugmentationStep::Rescale { theta, margin_px: r.random_range(lo..=hi) }
        })
    }

    pub fn render(&self, step: &AugmentationStep) -> Result<GrayImage> {
        let default_margin = DEFAULT_MARGIN_FRACTION * self.diameter_px;
        match *step {
            AugmentationStep::Rotation { theta } => self.base_window(theta, default_margin),
            AugmentationStep::Flip { theta, axis } => Ok(flip(&self.base_window(theta, default_margin)?, axis)),
            AugmentationStep::Translation { theta, dx, dy } => translate(&self.base_window(theta, default_margin)?, dx, dy),
            AugmentationStep::Rescale { theta, margin_px } => self.base_window(theta, margin_px),
        }
    }

    /// Augmentation `index`, deterministic in `(plan.seed, roi id, index)`.
    pub fn augmentation(&self, plan: &AugmentationPlan, index: usize) -> Result<GrayImage> {
        self.render(&self.step(plan, index)?)
    }
}

/// All `plan.total_per_roi()` augmentations of one lesion, rotation-major.
pub fn expand_augmentations(source: &AugmentSource, plan: &AugmentationPlan) -> Result<Vec<GrayImage>> {
    plan.validate()?;
    (0..plan.total_per_roi()).map(|i| source.augmentation(plan, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |y, x| (y * w + x) as f32 / (h * w) as f32)
    }

    #[test]
    fn horizontal_flip_example() {
        let img = GrayImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flip(&img, FlipAxis::Horizontal).pixels(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(flip(&img, FlipAxis::Vertical).pixels(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn translation_bounds_from_diameter() {
        assert_eq!(translation_bound(100.0), 4.0);
        assert_eq!(translation_bound(20.0), 2.0);
    }

    #[test]
    fn translate_rejects_oversized_shift() {
        let img = ramp(5, 8);
        assert!(translate(&img, 5, 0).is_err());
        assert_eq!(translate(&img, 0, 0).unwrap(), img);
        let t = translate(&img, 1, 0).unwrap();
        assert_eq!(t.get(0, 1), img.get(0, 0));
        assert_eq!(t.get(0, 0), img.get(0, 0), "edge replicated");
    }

    #[test]
    fn margin_window_arithmetic() {
        // d = 40, s = 0.25·d → 10 px per side → 60 px square.
        let lesion = BoundingBox { x0: 50, y0: 50, x1: 90, y1: 90 };
        let w = margin_window(200, 200, &lesion, 10.0).unwrap();
        assert_eq!((w.width(), w.height()), (60, 60));
        assert_eq!((w.x0, w.y0), (40, 40));
        assert!(w.contains(&lesion));
        // Clamped against the border but still containing the lesion.
        let edge = BoundingBox { x0: 0, y0: 2, x1: 30, y1: 20 };
        let w = margin_window(100, 100, &edge, 12.0).unwrap();
        assert_eq!(w.width(), w.height());
        assert!(w.contains(&edge) && w.x1 <= 100 && w.y1 <= 100);
    }

    #[test]
    fn margin_window_errors() {
        let too_big = BoundingBox { x0: 0, y0: 0, x1: 30, y1: 5 };
        assert!(matches!(margin_window(10, 40, &too_big, 0.0), Err(Error::Extraction(_))));
        let outside = BoundingBox { x0: 0, y0: 0, x1: 11, y1: 5 };
        assert!(matches!(margin_window(10, 10, &outside, 0.0), Err(Error::Extraction(_))));
    }

    #[test]
    fn identity_crop_with_zero_margin() {
        let img = ramp(12, 12);
        let full = BoundingBox { x0: 0, y0: 0, x1: 12, y1: 12 };
        assert_eq!(rescale_margin(&img, &full, 0.0).unwrap(), img);
    }

    #[test]
    fn plan_parsing_and_count() {
        let plan: AugmentationPlan = "30,3,7,5".parse().unwrap();
        assert_eq!(plan.total_per_roi(), 480);
        assert!("30,4,7,5".parse::<AugmentationPlan>().is_err());
        assert!("30,3,7".parse::<AugmentationPlan>().is_err());
    }

    #[test]
    fn intensity_rescale_examples() {
        let img = GrayImage::new(1, 3, vec![0.0, 50.0, 100.0]).unwrap();
        assert_eq!(intensity_rescale(&img).pixels(), &[0.0, 0.5, 1.0]);
        assert!(intensity_rescale(&GrayImage::filled(2, 2, 3.0)).pixels().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn tanh_range_mapping() {
        assert_eq!(to_tanh_range(0.5), 0.0);
        assert_eq!(to_tanh_range(0.0), -1.0);
        assert_eq!(to_tanh_range(1.0), 1.0);
        assert_eq!(from_tanh_range(-1.0), 0.0);
    }
}
