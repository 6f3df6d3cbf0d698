//! Slides and lesion annotations in, labelled fixed-size patches out.

mod manifest;
mod tissue;

pub use manifest::{Manifest, ManifestMeta, MANIFEST_HEADER};
pub use manifest::round6;
pub use tissue::{
    closing, compute_tissue_mask, remove_small_objects, saturation_value, threshold_tissue, FilterParams,
};

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::translator::Domain;

/// Row-major binary raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

pub type TissueMask = Mask;

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask size");
        Mask { height, width, bits }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Square window `size×size` with top-left corner `(row, col)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

/// Fraction of true pixels inside `window`.
pub fn coverage_fraction(mask: &Mask, window: Window) -> Result<f64> {
    let Window { row, col, size } = window;
    if size == 0 || row + size > mask.height() || col + size > mask.width() {
        return Err(Error::Bounds(format!(
            "window {size}x{size} at ({row},{col}) outside {}x{} mask",
            mask.height(),
            mask.width()
        )));
    }
    let mut count = 0usize;
    for r in row..row + size {
        let line = &mask.bits()[r * mask.width() + col..r * mask.width() + col + size];
        count += line.iter().filter(|&&b| b).count();
    }
    Ok(count as f64 / (size * size) as f64)
}

/// Summed-area table for O(1) window counts.
struct Integral {
    width: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn new(mask: &Mask) -> Self {
        let w = mask.width() + 1;
        let mut sums = vec![0u64; (mask.height() + 1) * w];
        for r in 0..mask.height() {
            let mut run = 0u64;
            for c in 0..mask.width() {
                run += mask.get(r, c) as u64;
                sums[(r + 1) * w + c + 1] = sums[r * w + c + 1] + run;
            }
        }
        Integral { width: w, sums }
    }

    fn fraction(&self, win: Window) -> f64 {
        let w = self.width;
        let (r0, c0, r1, c1) = (win.row, win.col, win.row + win.size, win.col + win.size);
        let count = self.sums[r1 * w + c1] + self.sums[r0 * w + c0] - self.sums[r0 * w + c1] - self.sums[r1 * w + c0];
        count as f64 / (win.size * win.size) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Anomalous,
    Ambiguous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(invalid!("unknown {} {s:?}", stringify!($ty))),
                }
            }
        }
    };
}

text_enum!(Label { Healthy => "healthy", Anomalous => "anomalous", Ambiguous => "ambiguous" });
text_enum!(Split { Train => "train", Test => "test" });

/// Coverage bands that decide a patch label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub tissue_min: f64,
    /// Healthy patches may have at most this lesion coverage.
    pub lesion_healthy_max: f64,
    /// Anomalous patches need at least this lesion coverage.
    pub lesion_anomalous_min: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            tissue_min: 0.90,
            lesion_healthy_max: 0.0,
            lesion_anomalous_min: 0.90,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.tissue_min) || !in_unit(self.lesion_healthy_max) || !in_unit(self.lesion_anomalous_min) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.lesion_healthy_max >= self.lesion_anomalous_min {
            return Err(Error::Config(
                "lesion_healthy_max must be below lesion_anomalous_min".into(),
            ));
        }
        Ok(())
    }
}

pub fn classify_patch(tissue: f64, lesion: f64, t: &ThresholdConfig) -> Result<Label> {
    for (name, v) in [("tissue", tissue), ("lesion", lesion)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid!("{name} coverage {v} outside [0, 1]"));
        }
    }
    Ok(if tissue < t.tissue_min {
        Label::Ambiguous
    } else if lesion <= t.lesion_healthy_max {
        Label::Healthy
    } else if lesion >= t.lesion_anomalous_min {
        Label::Anomalous
    } else {
        Label::Ambiguous
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub patch_id: String,
    pub slide_id: String,
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub tissue_coverage: f64,
    pub lesion_coverage: f64,
    pub label: Label,
    pub domain: Option<Domain>,
    pub split: Split,
}

/// An RGB slide with an optional pixel-aligned lesion annotation.
#[derive(Clone, Debug)]
pub struct SlideImage {
    pub id: String,
    pub pixels: RgbImage,
    pub lesion: Option<Mask>,
}

impl SlideImage {
    pub fn new(id: impl Into<String>, pixels: RgbImage, lesion: Option<Mask>) -> Result<Self> {
        if let Some(m) = &lesion {
            if (m.width() as u32, m.height() as u32) != pixels.dimensions() {
                return Err(invalid!(
                    "lesion mask {}x{} does not match slide {}x{}",
                    m.height(),
                    m.width(),
                    pixels.height(),
                    pixels.width()
                ));
            }
        }
        Ok(SlideImage {
            id: id.into(),
            pixels,
            lesion,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.height() as usize
    }

    pub fn width(&self) -> usize {
        self.pixels.width() as usize
    }

    /// Pixel crop of a patch.
    pub fn crop(&self, rec: &PatchRecord) -> RgbImage {
        image::imageops::crop_imm(&self.pixels, rec.col as u32, rec.row as u32, rec.size as u32, rec.size as u32)
            .to_image()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub patch_size: usize,
    /// Grid step; `None` means non-overlapping tiles.
    pub stride: Option<usize>,
    pub keep_ambiguous: bool,
    pub thresholds: ThresholdConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            patch_size: 512,
            stride: None,
            keep_ambiguous: false,
            thresholds: ThresholdConfig::default(),
        }
    }
}

/// Tile the slide on a regular grid and label every tile.
pub fn extract_patches(
    slide: &SlideImage,
    tissue: &TissueMask,
    cfg: &ExtractConfig,
    split: Split,
) -> Result<Vec<PatchRecord>> {
    if cfg.patch_size == 0 {
        return Err(invalid!("patch_size must be at least 1"));
    }
    let stride = cfg.stride.unwrap_or(cfg.patch_size);
    if stride == 0 {
        return Err(invalid!("stride must be at least 1"));
    }
    if (tissue.height(), tissue.width()) != (slide.height(), slide.width()) {
        return Err(invalid!("tissue mask is not aligned with slide {}", slide.id));
    }
    let size = cfg.patch_size;
    if size > slide.height() || size > slide.width() {
        return Ok(Vec::new());
    }
    let tissue_sum = Integral::new(tissue);
    let lesion_sum = slide.lesion.as_ref().map(Integral::new);
    let mut out = Vec::new();
    for row in (0..=slide.height() - size).step_by(stride) {
        for col in (0..=slide.width() - size).step_by(stride) {
            let win = Window { row, col, size };
            // labels are computed from the values as stored on disk
            let tissue_coverage = round6(tissue_sum.fraction(win));
            let lesion_coverage = round6(lesion_sum.as_ref().map_or(0.0, |s| s.fraction(win)));
            let label = classify_patch(tissue_coverage, lesion_coverage, &cfg.thresholds)?;
            if label == Label::Ambiguous && !cfg.keep_ambiguous {
                continue;
            }
            out.push(PatchRecord {
                patch_id: format!("{}_r{row}_c{col}", slide.id),
                slide_id: slide.id.clone(),
                row,
                col,
                size,
                tissue_coverage,
                lesion_coverage,
                label,
                domain: None,
                split,
            });
        }
    }
    Ok(out)
}

/// Seeded random halving of the healthy training pool into domains X and Y.
pub fn split_domains(manifest: &Manifest, seed: u64) -> Result<Manifest> {
    let mut out = manifest.clone();
    let pool: Vec<usize> = out
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == Label::Healthy && r.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if pool.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 healthy training patches, found {}",
            pool.len()
        )));
    }
    for r in out.records.iter_mut() {
        r.domain = None;
    }
    let mut order = pool.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = order.len().div_ceil(2);
    for (k, &i) in order.iter().enumerate() {
        out.records[i].domain = Some(if k < half { Domain::X } else { Domain::Y });
    }
    out.meta.split_seed = Some(seed);
    Ok(out)
}
