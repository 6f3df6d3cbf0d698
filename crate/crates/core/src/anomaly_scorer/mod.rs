//! Example-guided reconstruction and reconstruction-distance anomaly scores.

mod perceptual;
mod ssim;

pub use perceptual::{perceptual_distance, FeatureExtractor, PerceptualConfig};
pub use ssim::{ssim, SsimParams};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imageio::{array_to_rgb, read_patch, side_by_side, write_png};
use crate::patch_pipeline::{Label, Manifest};
use crate::tensor::Array;
use crate::translator::{Domain, StyleSource, TranslatorModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ssim,
    Perceptual,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ssim => "ssim",
            Metric::Perceptual => "perceptual",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssim" => Ok(Metric::Ssim),
            "perceptual" => Ok(Metric::Perceptual),
            _ => Err(invalid!("unknown metric {s:?}; expected one of {{ssim, perceptual}}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub metric: Metric,
    /// Domain whose content encoder reads the query.
    pub source: Domain,
    /// Domain whose style encoder and decoder produce the reconstruction.
    pub target: Domain,
    pub ssim: SsimParams,
    pub perceptual: PerceptualConfig,
    /// Extractor weights file; when absent the seeded random pyramid is used.
    pub perceptual_weights: Option<PathBuf>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            metric: Metric::Ssim,
            source: Domain::X,
            target: Domain::Y,
            ssim: SsimParams::default(),
            perceptual: PerceptualConfig::default(),
            perceptual_weights: None,
        }
    }
}

/// `x̄ = G_t(E_cs(x), E_st(x))`: one translation pass with the style taken
/// from the query itself.
pub fn reconstruct(x: &Array<f32>, model: &TranslatorModel<f32>, source: Domain, target: Domain) -> Result<Array<f32>> {
    model.translate(x, source, target, StyleSource::FromImage)
}

/// Distance between a query and its reconstruction; higher is more anomalous.
pub struct Scorer<'m> {
    pub model: &'m TranslatorModel<f32>,
    pub config: ScorerConfig,
    extractor: Option<FeatureExtractor>,
}

impl<'m> Scorer<'m> {
    pub fn new(model: &'m TranslatorModel<f32>, config: ScorerConfig) -> Result<Self> {
        let extractor = match config.metric {
            Metric::Ssim => None,
            Metric::Perceptual => Some(match &config.perceptual_weights {
                Some(p) => FeatureExtractor::load(p)?,
                None => FeatureExtractor::random(config.perceptual.clone())?,
            }),
        };
        Ok(Scorer {
            model,
            config,
            extractor,
        })
    }

    /// Score of a query against a given reconstruction.
    pub fn distance(&self, x: &Array<f32>, recon: &Array<f32>) -> Result<f64> {
        match self.config.metric {
            Metric::Ssim => Ok(1.0 - ssim(x, recon, &self.config.ssim)?),
            Metric::Perceptual => self.extractor.as_ref().expect("built for perceptual").distance(x, recon),
        }
    }

    pub fn reconstruct(&self, x: &Array<f32>) -> Result<Array<f32>> {
        reconstruct(x, self.model, self.config.source, self.config.target)
    }

    /// `(score, reconstruction)`.
    pub fn score(&self, x: &Array<f32>) -> Result<(f64, Array<f32>)> {
        let recon = self.reconstruct(x)?;
        let s = self.distance(x, &recon)?;
        if !s.is_finite() {
            return Err(Error::Numeric(format!("anomaly score {s}")));
        }
        Ok((s, recon))
    }
}

/// Anomaly score of `x` under `metric` with default scorer settings.
pub fn anomaly_score(x: &Array<f32>, model: &TranslatorModel<f32>, metric: Metric) -> Result<f64> {
    let cfg = ScorerConfig {
        metric,
        ..ScorerConfig::default()
    };
    Ok(Scorer::new(model, cfg)?.score(x)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyScoreRecord {
    pub patch_id: String,
    pub true_label: Label,
    /// Free text so external baselines can use their own names.
    pub metric: String,
    pub score: f64,
}

pub const SCORE_HEADER: &str = "patch_id,true_label,metric,score";

/// 8 significant digits.
pub fn format_score(v: f64) -> String {
    format!("{v:.7e}")
}

pub fn scores_to_string(records: &[AnomalyScoreRecord]) -> String {
    let mut s = format!("{SCORE_HEADER}\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.patch_id, r.true_label, r.metric, format_score(r.score)));
    }
    s
}

pub fn write_scores(path: &Path, records: &[AnomalyScoreRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, scores_to_string(records)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<AnomalyScoreRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SCORE_HEADER => {}
        other => {
            return Err(Error::format(
                path,
                format!("expected header {SCORE_HEADER:?}, found {:?}", other.unwrap_or("")),
            ))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", i + 2));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        let true_label = match f[1] {
            "healthy" => Label::Healthy,
            "anomalous" => Label::Anomalous,
            other => return Err(bad(format!("true_label must be healthy or anomalous, got {other:?}"))),
        };
        let score: f64 = f[3].parse().map_err(|_| bad(format!("bad score {:?}", f[3])))?;
        if !score.is_finite() {
            return Err(bad(format!("non-finite score {score}")));
        }
        out.push(AnomalyScoreRecord {
            patch_id: f[0].to_string(),
            true_label,
            metric: f[2].to_string(),
            score,
        });
    }
    Ok(out)
}

/// Result of scoring a manifest: records in manifest order plus failures.
#[derive(Debug, Default)]
pub struct ScoreRun {
    pub records: Vec<AnomalyScoreRecord>,
    pub failures: Vec<(String, Error)>,
}

/// Score every labelled test patch. Failing patches are reported, not fatal.
pub fn score_manifest(
    manifest: &Manifest,
    manifest_path: &Path,
    scorer: &Scorer<'_>,
    jobs: usize,
    dump_dir: Option<&Path>,
) -> Result<ScoreRun> {
    let recs: Vec<_> = manifest.test_records().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let metric = scorer.config.metric.to_string();
    let results: Vec<Result<AnomalyScoreRecord>> = pool.install(|| {
        recs.par_iter()
            .map(|r| {
                let x = read_patch(&Manifest::patch_path(manifest_path, r))?;
                let (score, recon) = scorer.score(&x)?;
                if let Some(dir) = dump_dir {
                    let pair = side_by_side(&array_to_rgb(&x)?, &array_to_rgb(&recon)?);
                    write_png(&dir.join(format!("{}.png", r.patch_id)), &pair)?;
                }
                Ok(AnomalyScoreRecord {
                    patch_id: r.patch_id.clone(),
                    true_label: r.label,
                    metric: metric.clone(),
                    score,
                })
            })
            .collect()
    });
    let mut run = ScoreRun::default();
    for (r, res) in recs.iter().zip(results) {
        match res {
            Ok(rec) => run.records.push(rec),
            Err(e) => run.failures.push((r.patch_id.clone(), e)),
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::tests::tiny_config;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64) -> Array<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_fn(&[3, 16, 16], |_| rng.random_range(-1.0f32..1.0))
    }

    #[test]
    fn reconstruction_is_single_pass_translation() {
        let m = TranslatorModel::<f32>::new(tiny_config(), 3).unwrap();
        let x = image(1);
        let r = reconstruct(&x, &m, Domain::X, Domain::Y).unwrap();
        assert_eq!(r.shape(), x.shape());
        let c = m.encode_content(&x, Domain::X).unwrap();
        let s = m.encode_style(&x, Domain::Y).unwrap();
        assert_eq!(r, m.decode(&c, &s, Domain::Y).unwrap());
        assert_eq!(r, reconstruct(&x, &m, Domain::X, Domain::Y).unwrap());
    }

    #[test]
    fn perfect_reconstruction_scores_zero() {
        let m = TranslatorModel::<f32>::new(tiny_config(), 3).unwrap();
        let s = Scorer::new(&m, ScorerConfig::default()).unwrap();
        let x = image(2);
        assert!(s.distance(&x, &x).unwrap().abs() < 1e-9);
        let a = anomaly_score(&x, &m, Metric::Ssim).unwrap();
        assert_eq!(a, anomaly_score(&x, &m, Metric::Ssim).unwrap());
        assert!(anomaly_score(&x, &m, Metric::Perceptual).unwrap() >= 0.0);
    }

    #[test]
    fn ssim_score_grows_with_noise() {
        let m = TranslatorModel::<f32>::new(tiny_config(), 3).unwrap();
        let s = Scorer::new(&m, ScorerConfig::default()).unwrap();
        let x = image(5);
        let mean_at = |amp: f32| {
            (0..50u64)
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(k);
                    let noisy = Array::from_fn(&[3, 16, 16], |i| x.data()[i] + amp * rng.random_range(-1.0f32..1.0));
                    s.distance(&x, &noisy).unwrap()
                })
                .sum::<f64>()
        };
        assert!(mean_at(0.05) < mean_at(0.2));
        assert!(mean_at(0.2) < mean_at(0.5));
    }

    #[test]
    fn metric_parse_lists_choices() {
        let e = "lpips".parse::<Metric>().unwrap_err().to_string();
        assert!(e.contains("{ssim, perceptual}"));
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let recs = vec![
            AnomalyScoreRecord {
                patch_id: "a".into(),
                true_label: Label::Healthy,
                metric: "ssim".into(),
                score: 0.123456789123,
            },
            AnomalyScoreRecord {
                patch_id: "b".into(),
                true_label: Label::Anomalous,
                metric: "ssim".into(),
                score: 1.5,
            },
        ];
        write_scores(&p, &recs).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("a,healthy,ssim,1.2345679e-1\n"));
        let back = read_scores(&p).unwrap();
        assert_eq!(back[0].score, 0.12345679);
        assert_eq!(back[1], recs[1]);
        fs::write(&p, "patch_id,true_label,metric,score\nx,ambiguous,ssim,1\n").unwrap();
        assert!(read_scores(&p).is_err());
    }
}
