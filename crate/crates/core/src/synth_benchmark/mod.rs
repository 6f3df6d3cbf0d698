//! Deterministic two-domain texture patches with inserted anomalies.
//!
//! Healthy patches are multi-octave value noise in a pink palette; the two
//! training domains differ by a colour tint. Anomalous patches add a blob of
//! finer, differently coloured texture.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{array_to_rgb, write_png};
use crate::patch_pipeline::{round6, Label, Manifest, ManifestMeta, PatchRecord, Split, ThresholdConfig};
use crate::tensor::Array;
use crate::translator::Domain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Training patches per domain.
    pub n_train: usize,
    /// Test patches per class.
    pub n_test: usize,
    pub size: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    /// Lattice cells across a patch for the coarsest octave.
    pub base_frequency: usize,
    pub octaves: usize,
    /// Anomalous texture frequency relative to the healthy one.
    pub anomaly_frequency_factor: usize,
    /// Light and dark RGB ends of the healthy palette, in `[0, 1]`.
    pub healthy_palette: [[f64; 3]; 2],
    /// Defaults to the healthy palette, so anomalies differ in texture only
    /// and colour alone cannot separate the classes.
    pub anomaly_palette: [[f64; 3]; 2],
    /// Red/blue shift separating the two domains.
    pub tint_delta: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let palette = [[0.95, 0.75, 0.85], [0.70, 0.35, 0.55]];
        SynthConfig {
            seed: 0,
            n_train: 2000,
            n_test: 200,
            size: 64,
            f_lo: 0.2,
            f_hi: 0.4,
            base_frequency: 4,
            octaves: 3,
            anomaly_frequency_factor: 4,
            healthy_palette: palette,
            anomaly_palette: palette,
            tint_delta: 0.06,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_lo > 0.0 && self.f_lo <= self.f_hi && self.f_hi < 1.0) {
            return Err(Error::Config("need 0 < f_lo <= f_hi < 1".into()));
        }
        if self.size < 32 {
            return Err(Error::Config("size must be at least 32".into()));
        }
        if self.base_frequency == 0 || self.octaves == 0 || self.anomaly_frequency_factor == 0 {
            return Err(Error::Config("texture frequencies and octaves must be positive".into()));
        }
        let mask_min = (self.f_lo * (self.size * self.size) as f64).ceil();
        let mask_max = (self.f_hi * (self.size * self.size) as f64).floor();
        if mask_min > mask_max {
            return Err(Error::Config("[f_lo, f_hi] contains no pixel count at this size".into()));
        }
        Ok(())
    }

    /// Number of indices accepted by [`gen_healthy`].
    pub fn healthy_count(&self) -> usize {
        2 * self.n_train + 2 * self.n_test
    }

    /// Healthy index whose image is the background of anomalous patch `index`.
    pub fn anomaly_base_index(&self, index: usize) -> usize {
        2 * self.n_train + self.n_test + index
    }
}

/// What a healthy index is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HealthyRole {
    Train(Domain),
    Test,
    AnomalyBase,
}

pub fn healthy_role(cfg: &SynthConfig, index: usize) -> HealthyRole {
    let n = cfg.n_train;
    if index < n {
        HealthyRole::Train(Domain::X)
    } else if index < 2 * n {
        HealthyRole::Train(Domain::Y)
    } else if index < 2 * n + cfg.n_test {
        HealthyRole::Test
    } else {
        HealthyRole::AnomalyBase
    }
}

fn rng_for(cfg: &SynthConfig, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 * 4 + stream);
    rng
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise in `[0, 1]`, row-major `size×size`.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, base: usize, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let mut amp_total = 0.0;
    for o in 0..octaves {
        let cells = base << o;
        let amp = 0.5f64.powi(o as i32);
        amp_total += amp;
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random()).collect();
        let at = |i: usize, j: usize| lattice[i * (cells + 1) + j];
        for y in 0..size {
            let fy = y as f64 / size as f64 * cells as f64;
            let (iy, ty) = (fy as usize, smoothstep(fy.fract()));
            for x in 0..size {
                let fx = x as f64 / size as f64 * cells as f64;
                let (ix, tx) = (fx as usize, smoothstep(fx.fract()));
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                out[y * size + x] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= amp_total);
    out
}

/// Palette-mapped texture as `(3, size, size)` in `[-1, 1]`.
fn colorize(noise: &[f64], palette: &[[f64; 3]; 2], tint: f64, size: usize) -> Vec<f64> {
    let shift = [tint, 0.0, -tint];
    let mut out = vec![0.0; 3 * size * size];
    for (i, &v) in noise.iter().enumerate() {
        for c in 0..3 {
            let rgb = palette[0][c] * (1.0 - v) + palette[1][c] * v + shift[c];
            out[c * size * size + i] = rgb.clamp(0.0, 1.0) * 2.0 - 1.0;
        }
    }
    out
}

fn to_array(size: usize, data: Vec<f64>) -> Array<f32> {
    Array::from_vec(&[3, size, size], data.into_iter().map(|v| v as f32).collect()).expect("size")
}

fn healthy_pixels(cfg: &SynthConfig, index: usize) -> Vec<f64> {
    let mut rng = rng_for(cfg, index, 0);
    let noise = value_noise(&mut rng, cfg.size, cfg.base_frequency, cfg.octaves);
    let tint = match healthy_role(cfg, index) {
        HealthyRole::Train(Domain::X) => cfg.tint_delta,
        HealthyRole::Train(Domain::Y) => -cfg.tint_delta,
        HealthyRole::Test | HealthyRole::AnomalyBase => rng.random_range(-cfg.tint_delta..=cfg.tint_delta),
    };
    colorize(&noise, &cfg.healthy_palette, tint, cfg.size)
}

/// Healthy texture for `index`; a pure function of `(cfg, index)`.
pub fn gen_healthy(cfg: &SynthConfig, index: usize) -> Array<f32> {
    to_array(cfg.size, healthy_pixels(cfg, index))
}

/// Anomalous patch `index` and its blob mask (row-major). Pixels outside the
/// mask equal `gen_healthy(cfg, cfg.anomaly_base_index(index))`.
pub fn gen_anomalous(cfg: &SynthConfig, index: usize) -> (Array<f32>, Vec<bool>) {
    let size = cfg.size;
    let n = size * size;
    let mut base = healthy_pixels(cfg, cfg.anomaly_base_index(index));
    let mut rng = rng_for(cfg, index, 1);

    // blob field: a few Gaussian bumps
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.25..0.75) * size as f64,
                rng.random_range(0.25..0.75) * size as f64,
                rng.random_range(0.12..0.25) * size as f64,
            )
        })
        .collect();
    let field: Vec<f64> = (0..n)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            bumps
                .iter()
                .map(|&(cy, cx, s)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp())
                .sum::<f64>()
        })
        .collect();

    // exact area: keep the `count` highest field values
    let target = rng.random_range(cfg.f_lo..=cfg.f_hi);
    let lo = (cfg.f_lo * n as f64).ceil() as usize;
    let hi = (cfg.f_hi * n as f64).floor() as usize;
    let count = ((target * n as f64).round() as usize).clamp(lo, hi);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..count] {
        mask[i] = true;
    }
    let level = field[order[count - 1]];
    let top = field[order[0]];

    let noise = value_noise(
        &mut rng,
        size,
        cfg.base_frequency * cfg.anomaly_frequency_factor,
        cfg.octaves,
    );
    let tint = rng.random_range(-cfg.tint_delta..=cfg.tint_delta);
    let texture = colorize(&noise, &cfg.anomaly_palette, tint, size);
    let ramp = ((top - level) * 0.15).max(1e-12);
    for i in (0..n).filter(|&i| mask[i]) {
        // soft edge inside the mask only
        let alpha = smoothstep(((field[i] - level) / ramp).clamp(0.0, 1.0)).max(0.35);
        for c in 0..3 {
            let k = c * n + i;
            base[k] = base[k] * (1.0 - alpha) + texture[k] * alpha;
        }
    }
    (to_array(size, base), mask)
}

/// Thresholds under which synthetic labels are consistent: every patch
/// counts as tissue, anomalous patches have lesion coverage of at least `f_lo`.
pub fn synth_thresholds(cfg: &SynthConfig) -> ThresholdConfig {
    ThresholdConfig {
        tissue_min: 0.0,
        lesion_healthy_max: 0.0,
        lesion_anomalous_min: (cfg.f_lo * 1e6).floor() / 1e6,
    }
}

/// Write all patches plus `manifest.csv` into `out_dir` and return the manifest.
pub fn write_benchmark(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let size = cfg.size;
    let record = |patch_id: String, lesion: f64, label: Label, domain: Option<Domain>, split: Split| PatchRecord {
        patch_id,
        slide_id: "synth".into(),
        row: 0,
        col: 0,
        size,
        tissue_coverage: 1.0,
        lesion_coverage: lesion,
        label,
        domain,
        split,
    };
    let healthy_jobs: Vec<usize> = (0..2 * cfg.n_train + cfg.n_test).collect();
    let healthy: Vec<PatchRecord> = healthy_jobs
        .par_iter()
        .map(|&i| {
            let (id, domain, split) = match healthy_role(cfg, i) {
                HealthyRole::Train(d) => (
                    format!("synth_{}_{:05}", d.to_string().to_lowercase(), i % cfg.n_train.max(1)),
                    Some(d),
                    Split::Train,
                ),
                _ => (format!("synth_test_healthy_{:05}", i - 2 * cfg.n_train), None, Split::Test),
            };
            write_png(&out_dir.join(format!("{id}.png")), &array_to_rgb(&gen_healthy(cfg, i))?)?;
            Ok(record(id, 0.0, Label::Healthy, domain, split))
        })
        .collect::<Result<_>>()?;
    let anomalous: Vec<PatchRecord> = (0..cfg.n_test)
        .into_par_iter()
        .map(|j| {
            let (img, mask) = gen_anomalous(cfg, j);
            let id = format!("synth_test_anomalous_{j:05}");
            write_png(&out_dir.join(format!("{id}.png")), &array_to_rgb(&img)?)?;
            let frac = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
            Ok(record(id, round6(frac), Label::Anomalous, None, Split::Test))
        })
        .collect::<Result<_>>()?;
    let meta = ManifestMeta {
        source: "synth".into(),
        patch_size: Some(size),
        thresholds: synth_thresholds(cfg),
        seed: Some(cfg.seed),
        split_seed: None,
    };
    let manifest = Manifest::new(healthy.into_iter().chain(anomalous).collect(), meta)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
