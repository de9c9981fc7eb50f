use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FAST: &[&str] = &[
    "synthetic.grid_nx=6",
    "synthetic.grid_ny=6",
    "synthetic.ap_count=8",
    "diffusion.epochs=3",
    "diffusion.steps=40",
    "diffusion.hidden=32,16,32",
    "generate.samples_per_location=4",
];

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.cfg")
}

fn fpaug(dir: &Path, args: &[&str], fast: bool) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fpaug"));
    cmd.current_dir(dir).args(args);
    if fast {
        for s in FAST {
            cmd.args(["--set", s]);
        }
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = fpaug(dir, args, true);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// `(mean, median, cdf rows)` from a metrics file.
fn metrics(path: &Path) -> (f64, f64, Vec<(f64, f64)>) {
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mean_error_m,median_error_m");
    let pair = |l: &str| {
        let (a, b) = l.split_once(',').unwrap();
        (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap())
    };
    let (mean, median) = pair(lines[1]);
    assert_eq!(lines[2], "error_m,cdf");
    (mean, median, lines[3..].iter().map(|l| pair(l)).collect())
}

#[test]
fn bundled_config_pipeline_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled_config();
    let out = fpaug(dir.path(), &["--config", cfg.to_str().unwrap(), "pipeline", "--out-dir", "run"], false);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (mean, median, cdf) = metrics(&dir.path().join("run/report.csv"));
    assert!(mean > 0.0 && median > 0.0);
    assert_eq!(cdf.last().unwrap().1, 1.0);
    for name in ["summary.csv", "split.csv", "config.cfg"] {
        assert!(dir.path().join("run").join(name).exists(), "missing {name}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean error"), "{stdout}");
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpaug(dir.path(), &["--set", "diffusion.lerning_rate=0.1", "pipeline", "--out-dir", "x"], false);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diffusion.lerning_rate"));

    fs::write(dir.path().join("bad.cfg"), "seed = 3\nsplit.stratgy = grid\n").unwrap();
    let out = fpaug(dir.path(), &["--config", "bad.cfg", "split", "--data", "d.csv", "--out", "s.csv"], false);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("split.stratgy") && err.contains(":2"), "{err}");
    assert!(!dir.path().join("x").exists());
}

#[test]
fn failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpaug(dir.path(), &["split", "--data", "missing.csv", "--out", "s.csv"], true);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: [split]"), "{err}");
}

#[test]
fn seed_flag_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "1", "synth-env", "--out", "a.csv"]);
    ok(dir.path(), &["--seed", "1", "synth-env", "--out", "b.csv"]);
    ok(dir.path(), &["--seed", "2", "synth-env", "--out", "c.csv"]);
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));

    ok(dir.path(), &["--seed", "1", "pipeline", "--out-dir", "p1"]);
    ok(dir.path(), &["--seed", "2", "pipeline", "--out-dir", "p2"]);
    assert_ne!(read("p1/report.csv"), read("p2/report.csv"));
    assert!(fs::read_to_string(dir.path().join("p2/config.cfg")).unwrap().contains("seed = 2"));
}

#[test]
fn staged_run_reproduces_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-env", "--out", "train.csv", "--test-out", "test.csv"]);
    ok(d, &["split", "--data", "train.csv", "--out", "split.csv"]);
    ok(d, &["augment", "--data", "train.csv", "--split", "split.csv", "--out", "augmented.csv"]);
    ok(d, &["train-diffusion", "--data", "augmented.csv", "--split", "split.csv", "--checkpoint", "model.ckpt"]);
    ok(d, &["generate", "--checkpoint", "model.ckpt", "--split", "split.csv", "--out", "generated.csv"]);
    ok(d, &["evaluate", "--train", "augmented.csv", "--train", "generated.csv", "--test", "test.csv", "--out", "staged.csv"]);
    ok(d, &["pipeline", "--out-dir", "whole"]);

    assert_eq!(fs::read(d.join("split.csv")).unwrap(), fs::read(d.join("whole/split.csv")).unwrap());
    let (m1, md1, cdf1) = metrics(&d.join("staged.csv"));
    let (m2, md2, cdf2) = metrics(&d.join("whole/report.csv"));
    // Files carry six decimals; equal values can differ by one rounding step.
    let tol = 1e-6 + 1e-12;
    assert!((m1 - m2).abs() <= tol && (md1 - md2).abs() <= tol, "{m1} {md1} vs {m2} {md2}");
    // Near-equal errors may merge into one CDF step in one file but not the
    // other, so compare the step functions rather than the rows.
    let step = |cdf: &[(f64, f64)], e: f64| cdf.iter().filter(|r| r.0 <= e + 2.0 * tol).map(|r| r.1).fold(0.0, f64::max);
    for &(e, _) in cdf1.iter().chain(&cdf2) {
        let (f1, f2) = (step(&cdf1, e), step(&cdf2, e));
        assert!((f1 - f2).abs() <= tol, "cdf at {e}: {f1} vs {f2}");
    }
}

#[test]
fn sweep_rows_follow_fractions() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--set", "augmenter=none", "sweep", "--fractions", "0,0.3,0.5", "--out", "sweep.csv"]);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[1] + r[2], 36.0);
        // Six printed decimals.
        assert!((r[3] - r[1] * (12.0 / 7.0)).abs() <= 5e-7);
    }
    assert!(rows.windows(2).all(|w| w[1][3] < w[0][3]));
}
