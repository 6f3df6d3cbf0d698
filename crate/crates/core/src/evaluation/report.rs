use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::plot::{draw_histogram, draw_roc};
use super::{auc, average_precision, roc_points, stats_at_threshold, youden, RocCurve};
use crate::anomaly_scorer::{read_scores, AnomalyScoreRecord};
use crate::error::{invalid, Error, Result};
use crate::imageio::write_png;
use crate::patch_pipeline::Label;

pub const HISTOGRAM_BINS: usize = 50;

/// Per-class counts over shared bin edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub healthy: Vec<u64>,
    pub anomalous: Vec<u64>,
}

impl Histogram {
    pub fn new(scores: &[f64], labels: &[bool], bins: usize) -> Self {
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + i as f64 * width })
            .collect();
        let mut h = Histogram {
            edges,
            healthy: vec![0; bins],
            anomalous: vec![0; bins],
        };
        for (&s, &l) in scores.iter().zip(labels) {
            let b = (((s - lo) / width).floor() as usize).min(bins - 1);
            if l {
                h.anomalous[b] += 1;
            } else {
                h.healthy[b] += 1;
            }
        }
        h
    }

    /// Counts divided by class size and bin width.
    pub fn density(&self, anomalous: bool) -> Vec<f64> {
        let counts = if anomalous { &self.anomalous } else { &self.healthy };
        let total: u64 = counts.iter().sum();
        counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, e)| {
                if total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64 / (e[1] - e[0])
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub n_healthy: usize,
    pub n_anomalous: usize,
    pub auc: f64,
    pub ap: f64,
    pub youden_threshold: f64,
    pub youden_j: f64,
    pub f1: f64,
    pub ca: f64,
    pub roc: RocCurve,
    pub histogram: Histogram,
}

impl EvalReport {
    pub fn from_records(records: &[AnomalyScoreRecord]) -> Result<Self> {
        let mut metrics: Vec<&str> = records.iter().map(|r| r.metric.as_str()).collect();
        metrics.sort_unstable();
        metrics.dedup();
        if metrics.len() > 1 {
            return Err(invalid!("score file mixes metrics {metrics:?}"));
        }
        let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
        let labels: Vec<bool> = records.iter().map(|r| r.true_label == Label::Anomalous).collect();
        let roc = roc_points(&scores, &labels)?;
        let (youden_threshold, youden_j) = youden(&roc);
        let (f1, ca) = stats_at_threshold(&scores, &labels, youden_threshold)?;
        Ok(EvalReport {
            metric: metrics.first().unwrap_or(&"").to_string(),
            n_healthy: roc.negatives,
            n_anomalous: roc.positives,
            auc: auc(&roc),
            ap: average_precision(&scores, &labels)?,
            youden_threshold,
            youden_j,
            f1,
            ca,
            histogram: Histogram::new(&scores, &labels, HISTOGRAM_BINS),
            roc,
        })
    }

    /// Flat `key=value` text; floats use the shortest exact representation.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric={}", self.metric);
        let _ = writeln!(s, "n_healthy={}", self.n_healthy);
        let _ = writeln!(s, "n_anomalous={}", self.n_anomalous);
        for (k, v) in [
            ("auc", self.auc),
            ("ap", self.ap),
            ("youden_threshold", self.youden_threshold),
            ("youden_j", self.youden_j),
            ("f1", self.f1),
            ("ca", self.ca),
        ] {
            let _ = writeln!(s, "{k}={v:?}");
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.roc.points {
            let _ = writeln!(s, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr);
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let h = &self.histogram;
        let (dh, da) = (h.density(false), h.density(true));
        let mut s = String::from("bin_lo,bin_hi,healthy_count,anomalous_count,healthy_density,anomalous_density\n");
        for i in 0..h.healthy.len() {
            let _ = writeln!(
                s,
                "{:?},{:?},{},{},{:?},{:?}",
                h.edges[i],
                h.edges[i + 1],
                h.healthy[i],
                h.anomalous[i],
                dh[i],
                da[i]
            );
        }
        s
    }

    /// Parse the `key=value` form back.
    pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| invalid!("report line without '=': {l:?}"))
            })
            .collect()
    }
}

/// Read a score file and write `report.txt`, `roc.csv`, `histogram.csv`,
/// `roc.png` and `histogram.png` into `out_dir`.
pub fn render_report(score_file: &Path, out_dir: &Path) -> Result<EvalReport> {
    let records = read_scores(score_file)?;
    let report = EvalReport::from_records(&records).map_err(|e| match e {
        Error::DegenerateInput(m) => Error::DegenerateInput(format!("{}: {m}", score_file.display())),
        other => other,
    })?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("report.txt", report.to_key_values())?;
    write("roc.csv", report.roc_csv())?;
    write("histogram.csv", report.histogram_csv())?;
    write_png(&out_dir.join("roc.png"), &draw_roc(&report.roc))?;
    write_png(&out_dir.join("histogram.png"), &draw_histogram(&report.histogram))?;
    Ok(report)
}
