use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Luma, Rgb, RgbImage};

const TINY: &str = r#"
[synth]
n_train = 6
n_test = 4
size = 32

[train]
checkpoint_every = 5

[train.model]
base_width = 4
n_res = 1
style_downsample = 2
mlp_dim = 8
upsample_kernel = 3
dis_width = 4
dis_layers = 2
dis_scales = 1
"#;

fn anodet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anodet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

fn synth(dir: &Path, cfg: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = anodet(&["--config", s(cfg), "--out", s(&data), "synth"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data.join("manifest.csv")
}

fn metric_rows(path: &Path) -> Vec<(u64, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().parse().unwrap(), f.next().unwrap().to_string())
        })
        .collect()
}

#[test]
fn unknown_metric_lists_choices() {
    let o = anodet(&["score", "--manifest", "m.csv", "--checkpoint", "c.ckpt", "--metric", "l1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("{ssim, perceptual}"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = anodet(&["--out", s(dir.path()), "train", "--manifest", "/nonexistent/manifest.csv"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&anodet(&["frobnicate"])), 2);
    assert_eq!(code(&anodet(&["--jobs", "0", "evaluate", "--scores", "x.csv"])), 2);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = anodet(&["--out", s(&dir.path().join("pp")), "preprocess", "--input", s(&empty)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no slide images"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nsteps = \"many\"\n").unwrap();
    assert_eq!(code(&anodet(&["--config", s(&bad), "synth"])), 2);
}

#[test]
fn train_requires_domains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let manifest = synth(dir.path(), &cfg);
    // Strip the domain column back to "none".
    let text = fs::read_to_string(&manifest).unwrap().replace(",X,", ",none,").replace(",Y,", ",none,");
    fs::write(&manifest, text).unwrap();
    let o = anodet(&["--config", s(&cfg), "--out", s(&dir.path().join("run")), "train", "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("split-domains"), "{}", stderr(&o));

    let o = anodet(&["--seed", "4", "split-domains", "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&manifest).unwrap();
    let nx = text.matches(",X,").count();
    let ny = text.matches(",Y,").count();
    assert_eq!((nx, ny), (6, 6));
}

#[test]
fn train_resume_score_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let manifest = synth(dir.path(), &cfg);
    let run = dir.path().join("run");
    let base = ["--config", s(&cfg), "--out", s(&run)];

    let o = anodet(&[&base[..], &["train", "--manifest", s(&manifest), "--steps", "10"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(run.join("latest.ckpt").is_file());
    assert!(run.join("step_00000010.ckpt").is_file());
    let resolved = fs::read_to_string(run.join("config.resolved")).unwrap();
    assert!(resolved.contains("steps = 10"), "{resolved}");
    let rows = metric_rows(&run.join("metrics.csv"));
    let names: std::collections::BTreeSet<_> = rows.iter().map(|r| r.1.clone()).collect();
    assert!(names.len() >= 5);
    for n in &names {
        let steps: Vec<u64> = rows.iter().filter(|r| &r.1 == n).map(|r| r.0).collect();
        assert_eq!(steps, (1..=10).collect::<Vec<_>>(), "{n}");
    }

    let ck5 = run.join("step_00000005.ckpt");
    let o = anodet(
        &[
            &base[..],
            &["train", "--manifest", s(&manifest), "--steps", "15", "--resume", s(&ck5)],
        ]
        .concat(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = metric_rows(&run.join("metrics.csv"));
    let steps: Vec<u64> = rows.iter().filter(|r| r.1 == names.iter().next().unwrap().as_str()).map(|r| r.0).collect();
    assert_eq!(steps, (1..=15).collect::<Vec<_>>());
    assert!(run.join("step_00000015.ckpt").is_file());

    let scored = dir.path().join("scored");
    let dump = dir.path().join("dump");
    let o = anodet(&[
        "--out",
        s(&scored),
        "score",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&run.join("latest.ckpt")),
        "--metric",
        "ssim",
        "--dump-reconstructions",
        s(&dump),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scores = fs::read_to_string(scored.join("scores.csv")).unwrap();
    assert!(scores.starts_with("patch_id,true_label,metric,score\n"));
    assert_eq!(scores.lines().count(), 1 + 8);
    assert_eq!(fs::read_dir(&dump).unwrap().count(), 8);

    let report_dir = dir.path().join("report");
    let o = anodet(&["--out", s(&report_dir), "evaluate", "--scores", s(&scored.join("scores.csv"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(report_dir.join("report.txt")).unwrap();
    for key in ["auc=", "ap=", "youden_threshold=", "f1=", "ca="] {
        assert!(report.contains(key), "{report}");
    }
    for f in ["roc.csv", "histogram.csv", "roc.png", "histogram.png"] {
        assert!(report_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn score_reports_missing_patches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let manifest = synth(dir.path(), &cfg);
    let run = dir.path().join("run");
    let o = anodet(&["--config", s(&cfg), "--out", s(&run), "train", "--manifest", s(&manifest), "--steps", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::remove_file(manifest.with_file_name("synth_test_anomalous_00002.png")).unwrap();
    let out = dir.path().join("scored");
    let o = anodet(&[
        "--out",
        s(&out),
        "score",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&run.join("latest.ckpt")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("synth_test_anomalous_00002"));
    assert_eq!(fs::read_to_string(out.join("scores.csv")).unwrap().lines().count(), 1 + 7);
}

#[test]
fn evaluate_external_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("baseline.csv");
    fs::write(
        &scores,
        "patch_id,true_label,metric,score\na,healthy,fanogan,0.1\nb,healthy,fanogan,0.4\nc,anomalous,fanogan,0.35\nd,anomalous,fanogan,0.8\n",
    )
    .unwrap();
    let out = dir.path().join("rep");
    let o = anodet(&["--out", s(&out), "evaluate", "--scores", s(&scores)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("auc=0.75\n"), "{report}");
    assert!(report.contains("metric=fanogan"));

    let o = anodet(&["--out", s(&out), "evaluate", "--scores", s(&dir.path().join("missing.csv"))]);
    assert_eq!(code(&o), 2);
}

/// 64x64 slide: left half tissue, right half glass.
fn slide() -> RgbImage {
    RgbImage::from_fn(64, 64, |x, _| if x < 32 { Rgb([200, 90, 150]) } else { Rgb([255, 255, 255]) })
}

#[test]
fn preprocess_splits_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("slides");
    fs::create_dir_all(input.join("train")).unwrap();
    fs::create_dir_all(input.join("test")).unwrap();
    slide().save(input.join("train/a.png")).unwrap();
    slide().save(input.join("test/b.png")).unwrap();
    // Lesion over the top-left tile of the test slide.
    let lesion = image::GrayImage::from_fn(64, 64, |x, y| Luma([if x < 32 && y < 32 { 255 } else { 0 }]));
    lesion.save(input.join("test/b.lesion.png")).unwrap();

    let run = |out: &Path| {
        let o = anodet(&["--out", s(out), "preprocess", "--input", s(&input), "--patch-size", "32"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(out.join("manifest.csv")).unwrap()
    };
    let (o1, o2) = (dir.path().join("p1"), dir.path().join("p2"));
    let m = run(&o1);
    let rows: Vec<&str> = m.lines().skip(1).collect();
    assert_eq!(
        rows,
        [
            "a_r0_c0,a,0,0,32,1.000000,0.000000,healthy,none,train",
            "a_r32_c0,a,32,0,32,1.000000,0.000000,healthy,none,train",
            "b_r0_c0,b,0,0,32,1.000000,1.000000,anomalous,none,test",
            "b_r32_c0,b,32,0,32,1.000000,0.000000,healthy,none,test",
        ]
    );
    assert!(o1.join("b_r0_c0.png").is_file());
    assert_eq!(m, run(&o2));
    assert_eq!(fs::read(o1.join("a_r32_c0.png")).unwrap(), fs::read(o2.join("a_r32_c0.png")).unwrap());
}
