use serde::{Deserialize, Serialize};

use super::tsne::TsneResult;
use crate::dataset::{LesionClass, RoiImage};
use crate::error::{param, Error, Result};

/// One embedded ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub class: LesionClass,
    /// `real`, `augmented` or `synthetic`.
    pub provenance: String,
}

/// Embedding coordinates with the ROIs they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub rows: Vec<EmbeddingRow>,
    pub kl: f64,
    pub kl_history: Vec<f64>,
    pub max_entropy_error: f64,
}

impl Embedding {
    pub fn new(result: &TsneResult, rois: &[RoiImage]) -> Result<Self> {
        if result.coords.len() != rois.len() {
            return Err(param(format!("{} coordinates for {} ROIs", result.coords.len(), rois.len())));
        }
        let rows = result
            .coords
            .iter()
            .zip(rois)
            .map(|(c, r)| EmbeddingRow {
                id: r.id.clone(),
                x: c[0],
                y: c[1],
                class: r.class,
                provenance: r.provenance.label().into(),
            })
            .collect();
        Ok(Embedding { rows, kl: result.kl, kl_history: result.kl_history.clone(), max_entropy_error: result.max_entropy_error })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// RGB scatter plot: color by class (cyst blue, metastasis red,
    /// hemangioma green); real ROIs are filled squares, augmented ones
    /// hollow squares and synthetic ones crosses.
    pub fn render_png(&self, side: usize) -> Result<Vec<u8>> {
        if side < 32 {
            return Err(param(format!("plot side {side} is below 32 pixels")));
        }
        let mut img = vec![255u8; side * side * 3];
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.rows {
            x0 = x0.min(r.x);
            x1 = x1.max(r.x);
            y0 = y0.min(r.y);
            y1 = y1.max(r.y);
        }
        let span = (x1 - x0).max(y1 - y0).max(1e-12);
        let margin = 8.0;
        let usable = side as f64 - 2.0 * margin;
        let mut put = |x: i64, y: i64, rgb: [u8; 3]| {
            if (0..side as i64).contains(&x) && (0..side as i64).contains(&y) {
                let o = (y as usize * side + x as usize) * 3;
                img[o..o + 3].copy_from_slice(&rgb);
            }
        };
        for r in &self.rows {
            let px = (margin + (r.x - x0) / span * usable).round() as i64;
            // Image rows grow downwards.
            let py = (side as f64 - margin - (r.y - y0) / span * usable).round() as i64;
            let rgb = match r.class {
                LesionClass::Cyst => [31, 87, 200],
                LesionClass::Metastasis => [210, 45, 45],
                LesionClass::Hemangioma => [40, 150, 60],
            };
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let on = match r.provenance.as_str() {
                        "real" => true,
                        "augmented" => dx.abs() == 2 || dy.abs() == 2,
                        _ => dx == dy || dx == -dy,
                    };
                    if on {
                        put(px + dx, py + dy, rgb);
                    }
                }
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, side as u32, side as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
            w.write_image_data(&img).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        Ok(out)
    }
}
