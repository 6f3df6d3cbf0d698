use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{Array, PadMode, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub seed: u64,
    /// Output channels of each 3×3 stage; stages after the first start with
    /// a 2×2 average pool.
    pub channels: Vec<usize>,
    pub layer_weights: Vec<f64>,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            seed: 0x1f_5eed,
            channels: vec![16, 32, 48, 64, 64],
            layer_weights: vec![1.0; 5],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StageFile {
    weight: Vec<f32>,
    bias: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ExtractorFile {
    config: PerceptualConfig,
    stages: Vec<StageFile>,
}

/// Fixed convolutional feature pyramid for perceptual distances.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub config: PerceptualConfig,
    /// Per stage `(weight (out,in,3,3), bias (out))`.
    stages: Vec<(Array<f32>, Array<f32>)>,
}

impl FeatureExtractor {
    /// He-normal random weights from `config.seed`.
    pub fn random(config: PerceptualConfig) -> Result<Self> {
        if config.channels.is_empty() || config.channels.len() != config.layer_weights.len() {
            return Err(Error::Config(
                "perceptual channels and layer_weights must be non-empty and equally long".into(),
            ));
        }
        if config.layer_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("perceptual layer weights must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for &cout in &config.channels {
            let normal = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt()).expect("positive std");
            let w = Array::from_fn(&[cout, cin, 3, 3], |_| normal.sample(&mut rng) as f32);
            stages.push((w, Array::zeros(&[cout])));
            cin = cout;
        }
        Ok(FeatureExtractor { config, stages })
    }

    /// Load an extractor (for example with pretrained weights) from JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ExtractorFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let cfg = file.config;
        if file.stages.len() != cfg.channels.len() || cfg.layer_weights.len() != cfg.channels.len() {
            return Err(Error::format(path, "stage count disagrees with config"));
        }
        let mut cin = 3;
        let mut stages = Vec::new();
        for (i, (st, &cout)) in file.stages.into_iter().zip(&cfg.channels).enumerate() {
            let bad = |_| Error::format(path, format!("stage {i} has wrong weight size"));
            let w = Array::from_vec(&[cout, cin, 3, 3], st.weight).map_err(bad)?;
            let b = Array::from_vec(&[cout], st.bias).map_err(bad)?;
            stages.push((w, b));
            cin = cout;
        }
        Ok(FeatureExtractor { config: cfg, stages })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ExtractorFile {
            config: self.config.clone(),
            stages: self
                .stages
                .iter()
                .map(|(w, b)| StageFile {
                    weight: w.data().to_vec(),
                    bias: b.data().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&file).expect("extractor serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Per-stage features of a `(3,H,W)` image, each unit-normalized along
    /// channels at every position.
    pub fn features(&self, image: &Array<f32>) -> Result<Vec<Array<f32>>> {
        if image.ndim() != 3 || image.shape()[0] != 3 {
            return Err(invalid!("perceptual features need (3,H,W), got {:?}", image.shape()));
        }
        let tape = Tape::inference();
        let mut x: Var<'_, f32> = tape.constant(image.clone().unsqueeze0());
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, (w, b)) in self.stages.iter().enumerate() {
            if i > 0 {
                let s = x.shape();
                if s[2] >= 2 && s[3] >= 2 {
                    x = x.avgpool2()?;
                }
            }
            x = x
                .conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), 1, 1, PadMode::Zero)?
                .relu();
            out.push(unit_normalize(&x.value()));
        }
        Ok(out)
    }

    /// `Σ_l w_l · mean_positions Σ_c (f̂a − f̂b)²`.
    pub fn distance(&self, a: &Array<f32>, b: &Array<f32>) -> Result<f64> {
        if a.shape() != b.shape() {
            return Err(invalid!("perceptual shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
        }
        let (fa, fb) = (self.features(a)?, self.features(b)?);
        let mut total = 0.0;
        for ((x, y), &wl) in fa.iter().zip(&fb).zip(&self.config.layer_weights) {
            let hw = x.shape()[2] * x.shape()[3];
            let sq: f64 = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(&u, &v)| ((u - v) as f64).powi(2))
                .sum();
            total += wl * sq / hw as f64;
        }
        Ok(total)
    }
}

/// Divide each position's channel vector by its L2 norm.
fn unit_normalize(x: &Array<f32>) -> Array<f32> {
    let s = x.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let mut out = x.clone();
    let d = out.data_mut();
    for p in 0..hw {
        let norm = (0..c).map(|ch| (d[ch * hw + p] as f64).powi(2)).sum::<f64>().sqrt() + 1e-10;
        for ch in 0..c {
            d[ch * hw + p] = (d[ch * hw + p] as f64 / norm) as f32;
        }
    }
    out
}

/// Distance with the default extractor.
pub fn perceptual_distance(a: &Array<f32>, b: &Array<f32>, extractor: &FeatureExtractor) -> Result<f64> {
    extractor.distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn image(seed: u64) -> Array<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // smooth-ish content so noise is a genuine corruption
        Array::from_fn(&[3, 32, 32], |_| rng.random_range(-0.5f32..0.5))
    }

    #[test]
    fn identity_symmetry_and_shape_errors() {
        let fx = FeatureExtractor::random(PerceptualConfig::default()).unwrap();
        let (a, b) = (image(1), image(2));
        assert_eq!(fx.distance(&a, &a).unwrap(), 0.0);
        let (ab, ba) = (fx.distance(&a, &b).unwrap(), fx.distance(&b, &a).unwrap());
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-9);
        assert!(fx.distance(&a, &Array::zeros(&[3, 16, 32])).is_err());
    }

    #[test]
    fn distance_grows_with_noise_amplitude() {
        let fx = FeatureExtractor::random(PerceptualConfig::default()).unwrap();
        let a = image(9);
        let mean_at = |amp: f32| {
            (0..20u64)
                .map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
                    let noisy = Array::from_fn(&[3, 32, 32], |i| a.data()[i] + amp * rng.random_range(-1.0f32..1.0));
                    fx.distance(&a, &noisy).unwrap()
                })
                .sum::<f64>()
                / 20.0
        };
        let (d1, d3, d5) = (mean_at(0.1), mean_at(0.3), mean_at(0.5));
        assert!(d1 < d3 && d3 < d5, "{d1} {d3} {d5}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.json");
        let fx = FeatureExtractor::random(PerceptualConfig::default()).unwrap();
        fx.save(&p).unwrap();
        let back = FeatureExtractor::load(&p).unwrap();
        let (a, b) = (image(3), image(4));
        assert_eq!(fx.distance(&a, &b).unwrap(), back.distance(&a, &b).unwrap());
    }
}
