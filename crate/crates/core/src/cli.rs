//! Command-line driver. `main` only forwards to [`run`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::anomaly_scorer::{score_manifest, write_scores, Metric, Scorer, ScorerConfig};
use crate::error::Error;
use crate::evaluation::render_report;
use crate::imageio::{read_mask, read_rgb, write_png};
use crate::patch_pipeline::{
    compute_tissue_mask, extract_patches, split_domains, ExtractConfig, FilterParams, Manifest, ManifestMeta,
    SlideImage, Split,
};
use crate::synth_benchmark::{write_benchmark, SynthConfig};
use crate::training::{load_domain_pools, run_training, TrainConfig};
use crate::translator::Checkpoint;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "anodet", version, about = "Anomaly detection by content/style image translation")]
pub struct Cli {
    /// TOML file with `[synth]`, `[preprocess]`, `[train]` and `[score]` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tile slides into labelled patches.
    Preprocess(PreprocessArgs),
    /// Assign healthy training patches to domains X and Y.
    SplitDomains(SplitArgs),
    Train(TrainArgs),
    Score(ScoreArgs),
    /// Compute ROC/AP/Youden statistics from a score file.
    Evaluate(EvaluateArgs),
    /// Generate the synthetic two-domain texture benchmark.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Slide directory; `train/` and `test/` subdirectories select the split.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub keep_ambiguous: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Rewritten in place unless `--out` is given.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub max_patches: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `ssim` or `perceptual`.
    #[arg(long)]
    pub metric: Option<String>,
    /// Write input/reconstruction pairs here.
    #[arg(long)]
    pub dump_reconstructions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub filter: FilterParams,
    pub extract: ExtractConfig,
}

/// Contents of `--config`, and after flag overrides the resolved run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every section seed when set.
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub score: ScorerConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> crate::Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.train.seed = s;
        }
    }
}

/// Failure carrying its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: e.to_string(),
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: Cli) -> CliResult {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(Error::io(p, e)))?;
            RunConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if cfg.jobs == Some(0) {
        return Err(usage("--jobs must be positive"));
    }
    cfg.apply_seed();
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let jobs = cfg
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // Only the first call in a process can set the global pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();

    match cli.command {
        Command::Synth(a) => cmd_synth(cfg, a, &out),
        Command::Preprocess(a) => cmd_preprocess(cfg, a, &out),
        Command::SplitDomains(a) => cmd_split(cfg, a, cli.out.as_deref()),
        Command::Train(a) => cmd_train(cfg, a, &out),
        Command::Score(a) => cmd_score(cfg, a, &out, jobs),
        Command::Evaluate(a) => cmd_evaluate(cfg, a, &out),
    }
}

fn echo_config(cfg: &RunConfig, out: &Path) -> CliResult {
    fs::create_dir_all(out).map_err(|e| usage(Error::io(out, e)))?;
    let p = out.join("config.resolved");
    fs::write(&p, cfg.to_toml()).map_err(|e| usage(Error::io(&p, e)))
}

fn cmd_synth(mut cfg: RunConfig, a: SynthArgs, out: &Path) -> CliResult {
    let s = &mut cfg.synth;
    s.n_train = a.n_train.unwrap_or(s.n_train);
    s.n_test = a.n_test.unwrap_or(s.n_test);
    s.size = a.size.unwrap_or(s.size);
    s.validate().map_err(usage)?;
    echo_config(&cfg, out)?;
    let m = write_benchmark(&cfg.synth, out).map_err(runtime)?;
    log::info!("wrote {} patches to {}", m.records.len(), out.display());
    Ok(())
}

/// `*.png` slides in `dir`, sorted, skipping `*.lesion.png` masks.
fn list_slides(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| usage(Error::io(dir, e)))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| usage(Error::io(dir, e)))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if p.is_file() && name.ends_with(".png") && !name.ends_with(".lesion.png") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn load_slide(path: &Path) -> crate::Result<SlideImage> {
    let id = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".png"))
        .unwrap_or_default()
        .to_string();
    let lesion_path = path.with_file_name(format!("{id}.lesion.png"));
    let lesion = if lesion_path.exists() {
        Some(read_mask(&lesion_path)?)
    } else {
        None
    };
    SlideImage::new(id, read_rgb(path)?, lesion)
}

fn cmd_preprocess(mut cfg: RunConfig, a: PreprocessArgs, out: &Path) -> CliResult {
    let ex = &mut cfg.preprocess.extract;
    ex.patch_size = a.patch_size.unwrap_or(ex.patch_size);
    ex.stride = a.stride.or(ex.stride);
    ex.keep_ambiguous |= a.keep_ambiguous;
    ex.thresholds.validate().map_err(usage)?;
    if ex.patch_size == 0 || ex.stride == Some(0) {
        return Err(usage("patch size and stride must be positive"));
    }
    if !a.input.is_dir() {
        return Err(usage(format!("{} is not a readable directory", a.input.display())));
    }
    let (train, test) = (a.input.join("train"), a.input.join("test"));
    let mut jobs = Vec::new();
    if train.is_dir() || test.is_dir() {
        for (dir, split) in [(train, Split::Train), (test, Split::Test)] {
            if dir.is_dir() {
                jobs.extend(list_slides(&dir)?.into_iter().map(|p| (p, split)));
            }
        }
    } else {
        jobs.extend(list_slides(&a.input)?.into_iter().map(|p| (p, Split::Train)));
    }
    if jobs.is_empty() {
        return Err(usage(format!("no slide images found in {}", a.input.display())));
    }
    let slides = jobs
        .iter()
        .map(|(p, split)| load_slide(p).map(|s| (s, *split)))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(usage)?;
    echo_config(&cfg, out)?;

    let mut records = Vec::new();
    for (slide, split) in &slides {
        let tissue = compute_tissue_mask(&slide.pixels, &cfg.preprocess.filter).map_err(runtime)?;
        let recs = extract_patches(slide, &tissue, &cfg.preprocess.extract, *split).map_err(runtime)?;
        for r in &recs {
            write_png(&out.join(format!("{}.png", r.patch_id)), &slide.crop(r)).map_err(runtime)?;
        }
        log::info!("{}: {} patches", slide.id, recs.len());
        records.extend(recs);
    }
    let meta = ManifestMeta {
        source: "preprocess".into(),
        patch_size: Some(cfg.preprocess.extract.patch_size),
        thresholds: cfg.preprocess.extract.thresholds,
        seed: cfg.seed,
        split_seed: None,
    };
    let m = Manifest::new(records, meta).map_err(runtime)?;
    m.write(&out.join("manifest.csv")).map_err(runtime)
}

fn cmd_split(cfg: RunConfig, a: SplitArgs, out: Option<&Path>) -> CliResult {
    let m = Manifest::read(&a.manifest).map_err(usage)?;
    let seed = cfg.seed.unwrap_or(0);
    let split = split_domains(&m, seed).map_err(usage)?;
    let target = match out {
        Some(dir) => {
            echo_config(&cfg, dir)?;
            if Manifest::patch_dir(&a.manifest) != dir {
                log::warn!("patch images stay in {}", Manifest::patch_dir(&a.manifest).display());
            }
            dir.join("manifest.csv")
        }
        None => a.manifest.clone(),
    };
    split.write(&target).map_err(runtime)?;
    let nx = split.records.iter().filter(|r| r.domain == Some(crate::translator::Domain::X)).count();
    let ny = split.records.iter().filter(|r| r.domain == Some(crate::translator::Domain::Y)).count();
    log::info!("domain X: {nx}, domain Y: {ny}");
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs, out: &Path) -> CliResult {
    let t = &mut cfg.train;
    t.steps = a.steps.unwrap_or(t.steps);
    t.max_patches = a.max_patches.or(t.max_patches);
    t.validate().map_err(usage)?;
    let m = Manifest::read(&a.manifest).map_err(usage)?;
    if !m.has_domains() {
        return Err(usage(format!(
            "{} has no domain assignment; run `split-domains` first",
            a.manifest.display()
        )));
    }
    if let Some(r) = &a.resume {
        if !r.is_file() {
            return Err(usage(format!("checkpoint {} not found", r.display())));
        }
    }
    let pools = load_domain_pools(&m, &a.manifest, cfg.train.max_patches, cfg.train.seed).map_err(usage)?;
    echo_config(&cfg, out)?;
    log::info!("training on {} X and {} Y patches", pools.x.len(), pools.y.len());
    let outcome = run_training(&cfg.train, &pools, out, a.resume.as_deref()).map_err(runtime)?;
    log::info!("step {} saved to {}", outcome.final_step, outcome.checkpoint.display());
    Ok(())
}

fn cmd_score(mut cfg: RunConfig, a: ScoreArgs, out: &Path, jobs: usize) -> CliResult {
    if let Some(name) = &a.metric {
        cfg.score.metric = name.parse::<Metric>().map_err(usage)?;
    }
    let m = Manifest::read(&a.manifest).map_err(usage)?;
    let ck = Checkpoint::load(&a.checkpoint).map_err(usage)?;
    let scorer = Scorer::new(&ck.model, cfg.score.clone()).map_err(usage)?;
    echo_config(&cfg, out)?;
    let run = score_manifest(&m, &a.manifest, &scorer, jobs, a.dump_reconstructions.as_deref()).map_err(runtime)?;
    let path = out.join("scores.csv");
    write_scores(&path, &run.records).map_err(runtime)?;
    log::info!("scored {} patches into {}", run.records.len(), path.display());
    if run.failures.is_empty() {
        return Ok(());
    }
    for (id, e) in &run.failures {
        eprintln!("{id}: {e}");
    }
    Err(runtime(format!("{} patches failed to score", run.failures.len())))
}

fn cmd_evaluate(cfg: RunConfig, a: EvaluateArgs, out: &Path) -> CliResult {
    if !a.scores.is_file() {
        return Err(usage(format!("score file {} not found", a.scores.display())));
    }
    echo_config(&cfg, out)?;
    let r = render_report(&a.scores, out).map_err(usage)?;
    println!("{}", r.to_key_values().trim_end());
    Ok(())
}
