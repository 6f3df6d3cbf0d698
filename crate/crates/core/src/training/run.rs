use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossWeights, StepMetrics, Trainer};
use crate::error::{Error, Result};
use crate::imageio::read_patch;
use crate::nn::AdamConfig;
use crate::patch_pipeline::Manifest;
use crate::tensor::Array;
use crate::translator::{Checkpoint, Domain, TranslatorConfig, TranslatorModel};

/// Everything a training run reads from its TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    /// Metrics rows are written every `log_every` steps.
    pub log_every: u64,
    /// Cap on patches loaded per domain, drawn without replacement.
    pub max_patches: Option<usize>,
    pub loss: LossWeights,
    pub optimizer: AdamConfig,
    pub model: TranslatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 100_000,
            batch_size: 1,
            checkpoint_every: 10_000,
            log_every: 1,
            max_patches: None,
            loss: LossWeights::default(),
            optimizer: AdamConfig::default(),
            model: TranslatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.model.validate()?;
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "batch_size, checkpoint_every and log_every must be positive".into(),
            ));
        }
        if self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return Err(Error::Config("optimizer.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Decoded healthy training patches of both domains.
#[derive(Clone, Debug, Default)]
pub struct DomainPools {
    pub x: Vec<Array<f32>>,
    pub y: Vec<Array<f32>>,
}

impl DomainPools {
    pub fn get(&self, d: Domain) -> &[Array<f32>] {
        match d {
            Domain::X => &self.x,
            Domain::Y => &self.y,
        }
    }
}

/// Load domain-assigned patches next to `manifest_path`, optionally keeping
/// a seeded subset of at most `max_patches` per domain.
pub fn load_domain_pools(
    manifest: &Manifest,
    manifest_path: &Path,
    max_patches: Option<usize>,
    seed: u64,
) -> Result<DomainPools> {
    if !manifest.has_domains() {
        return Err(Error::Config(
            "manifest has no domain assignment; run `split-domains` first".into(),
        ));
    }
    let mut pools = DomainPools::default();
    for d in [Domain::X, Domain::Y] {
        let mut recs: Vec<_> = manifest.records.iter().filter(|r| r.domain == Some(d)).collect();
        if let Some(cap) = max_patches.filter(|&c| c < recs.len()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eed_0000 + d.index() as u64));
            recs = recs.choose_multiple(&mut rng, cap).copied().collect();
        }
        let pool = recs
            .iter()
            .map(|r| read_patch(&Manifest::patch_path(manifest_path, r)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = pool.first() {
            if pool.iter().any(|p| p.shape() != first.shape()) {
                return Err(Error::InvalidInput(format!("domain {d} mixes patch sizes")));
            }
        }
        match d {
            Domain::X => pools.x = pool,
            Domain::Y => pools.y = pool,
        }
    }
    if pools.x.is_empty() || pools.y.is_empty() {
        return Err(Error::InsufficientData("both domains need at least one patch".into()));
    }
    Ok(pools)
}

/// Deterministic batch order. Each epoch spans the smaller domain and
/// reshuffles both domains from `(seed, epoch, domain)`, so any step's batch
/// can be recomputed without replaying earlier ones.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    seed: u64,
    sizes: [usize; 2],
    batch: usize,
    cached: Option<(u64, [Vec<usize>; 2])>,
}

impl BatchSampler {
    pub fn new(seed: u64, n_x: usize, n_y: usize, batch: usize) -> Result<Self> {
        if batch == 0 || n_x.min(n_y) < batch {
            return Err(Error::InsufficientData(format!(
                "batch size {batch} needs at least that many patches per domain (have {n_x} and {n_y})"
            )));
        }
        Ok(BatchSampler {
            seed,
            sizes: [n_x, n_y],
            batch,
            cached: None,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        (self.sizes[0].min(self.sizes[1]) / self.batch) as u64
    }

    fn permutation(&self, epoch: u64, d: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.sizes[d]).collect();
        let key = self.seed
            ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (d as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
        idx
    }

    /// Indices into the X and Y pools for zero-based batch number `k`.
    pub fn indices(&mut self, k: u64) -> (Vec<usize>, Vec<usize>) {
        let per = self.batches_per_epoch();
        let (epoch, pos) = (k / per, (k % per) as usize);
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            self.cached = Some((epoch, [self.permutation(epoch, 0), self.permutation(epoch, 1)]));
        }
        let perms = &self.cached.as_ref().expect("just filled").1;
        let span = pos * self.batch..(pos + 1) * self.batch;
        (perms[0][span.clone()].to_vec(), perms[1][span].to_vec())
    }

    pub fn batch(&mut self, k: u64, pools: &DomainPools) -> Result<(Array<f32>, Array<f32>)> {
        let (ix, iy) = self.indices(k);
        let pick = |pool: &[Array<f32>], idx: &[usize]| Array::stack(&idx.iter().map(|&i| pool[i].clone().unsqueeze0()).collect::<Vec<_>>());
        Ok((pick(&pools.x, &ix)?, pick(&pools.y, &iy)?))
    }
}

/// Appends `step,loss_name,value` rows.
pub struct MetricsLog {
    path: PathBuf,
    file: fs::File,
}

impl MetricsLog {
    pub const HEADER: &'static str = "step,loss_name,value";

    /// Fresh log, or continue after `resume_step` dropping any later rows.
    pub fn open(path: &Path, resume_step: Option<u64>) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut kept = format!("{}\n", Self::HEADER);
        if let Some(step) = resume_step {
            if let Ok(text) = fs::read_to_string(path) {
                for line in text.lines().skip(1) {
                    let s: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
                    if s.is_some_and(|s| s <= step) {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        fs::write(path, kept).map_err(io)?;
        let file = fs::OpenOptions::new().append(true).open(path).map_err(io)?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        let mut rows = String::new();
        for (name, v) in StepMetrics::NAMES.iter().zip(m.values()) {
            rows.push_str(&format!("{},{name},{v:e}\n", m.step));
        }
        self.file
            .write_all(rows.as_bytes())
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Parse a log back into `(step, name, value)` rows.
    pub fn read(path: &Path) -> Result<Vec<(u64, String, f64)>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .skip(1)
            .map(|line| {
                let mut it = line.split(',');
                let (s, n, v) = (it.next(), it.next(), it.next());
                match (s.and_then(|s| s.parse().ok()), n, v.and_then(|v| v.parse().ok())) {
                    (Some(s), Some(n), Some(v)) => Ok((s, n.to_string(), v)),
                    _ => Err(Error::format(path, format!("bad metrics row {line:?}"))),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_step: u64,
    pub last_metrics: Option<StepMetrics>,
    pub checkpoint: PathBuf,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:08}.ckpt")
}

/// Train until `cfg.steps`, writing `metrics.csv`, periodic checkpoints and
/// `latest.ckpt` into `out_dir`.
pub fn run_training(
    cfg: &TrainConfig,
    pools: &DomainPools,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(Checkpoint::load_compatible(p, &cfg.model)?, cfg.optimizer, cfg.seed)?,
        None => Trainer::new(TranslatorModel::new(cfg.model.clone(), cfg.seed)?, cfg.optimizer, cfg.seed),
    };
    let start = trainer.step();
    let mut sampler = BatchSampler::new(cfg.seed, pools.x.len(), pools.y.len(), cfg.batch_size)?;
    let mut log = MetricsLog::open(&out_dir.join("metrics.csv"), resume.map(|_| start))?;
    let settings = serde_json::to_value(cfg).expect("config serializes");
    let latest = out_dir.join("latest.ckpt");
    let mut last = None;

    for k in start..cfg.steps {
        let (x, y) = sampler.batch(k, pools)?;
        let m = trainer.train_step(&x, &y, &cfg.loss)?;
        if m.step % cfg.log_every == 0 {
            log.append(&m)?;
        }
        if m.step % cfg.checkpoint_every == 0 {
            let ck = trainer.snapshot(settings.clone());
            ck.save(&out_dir.join(checkpoint_name(m.step)))?;
            ck.save(&latest)?;
        }
        if m.step % 100 == 0 || m.step == cfg.steps {
            log::info!(
                "step {} img {:.4} cyc {:.4} g_adv {:.4} d_adv {:.4}",
                m.step,
                m.img_recon,
                m.cycle,
                m.gen_adv,
                m.dis_adv
            );
        }
        last = Some(m);
    }
    trainer.snapshot(settings).save(&latest)?;
    Ok(TrainOutcome {
        final_step: trainer.step(),
        last_metrics: last,
        checkpoint: latest,
    })
}
