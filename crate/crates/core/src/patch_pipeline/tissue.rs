use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::Mask;
use crate::error::{invalid, Result};

/// HSV background test plus morphological cleanup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Pixels below this saturation are background candidates.
    pub saturation_threshold: f64,
    /// Pixels above this value (brightness) are background candidates.
    pub value_threshold: f64,
    /// Disk radius of the closing, in pixels.
    pub closing_radius: usize,
    /// Connected tissue regions smaller than this are dropped.
    pub min_object_size: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            saturation_threshold: 0.08,
            value_threshold: 0.82,
            closing_radius: 4,
            min_object_size: 64,
        }
    }
}

/// HSV saturation and value of an 8-bit RGB pixel, both in `[0, 1]`.
pub fn saturation_value(px: [u8; 3]) -> (f64, f64) {
    let max = px.iter().copied().max().unwrap_or(0) as f64;
    let min = px.iter().copied().min().unwrap_or(0) as f64;
    let sat = if max == 0.0 { 0.0 } else { (max - min) / max };
    (sat, max / 255.0)
}

/// Per-pixel tissue test before morphology: background is near-white and
/// nearly unsaturated.
pub fn threshold_tissue(rgb: &RgbImage, params: &FilterParams) -> Result<Mask> {
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(invalid!("empty slide raster"));
    }
    let bits = rgb
        .pixels()
        .map(|p| {
            let (s, v) = saturation_value(p.0);
            !(s < params.saturation_threshold && v > params.value_threshold)
        })
        .collect();
    Ok(Mask::from_bits(h as usize, w as usize, bits))
}

/// Offsets of a digital disk of radius `r`.
fn disk(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Max (dilate) or min (erode) over a disk; out-of-raster neighbours are
/// ignored so the raster border neither grows nor erodes the mask.
fn morph(mask: &Mask, r: usize, dilate: bool) -> Mask {
    if r == 0 {
        return mask.clone();
    }
    let offsets = disk(r);
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            let mut hit = !dilate;
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy < 0 || xx < 0 || yy >= h || xx >= w {
                    continue;
                }
                let v = mask.get(yy as usize, xx as usize);
                if dilate && v {
                    hit = true;
                    break;
                }
                if !dilate && !v {
                    hit = false;
                    break;
                }
            }
            out[(y * w + x) as usize] = hit;
        }
    }
    Mask::from_bits(mask.height(), mask.width(), out)
}

pub fn closing(mask: &Mask, radius: usize) -> Mask {
    morph(&morph(mask, radius, true), radius, false)
}

/// Drop 4-connected true regions with fewer than `min_size` pixels.
pub fn remove_small_objects(mask: &Mask, min_size: usize) -> Mask {
    if min_size <= 1 {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let mut out = mask.clone();
    let mut seen = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut region = Vec::new();
    for start in 0..mask.len() {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        region.clear();
        stack.push(start);
        seen[start] = true;
        while let Some(i) = stack.pop() {
            region.push(i);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && mask.bits()[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if region.len() < min_size {
            for &i in &region {
                out.set(i / w, i % w, false);
            }
        }
    }
    out
}

/// Threshold, close, then remove small objects.
pub fn compute_tissue_mask(rgb: &RgbImage, params: &FilterParams) -> Result<Mask> {
    let raw = threshold_tissue(rgb, params)?;
    let closed = closing(&raw, params.closing_radius);
    Ok(remove_small_objects(&closed, params.min_object_size))
}
