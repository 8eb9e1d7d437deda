use std::ffi::OsStr;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 16] = [
    "--set", "data.n_train=64",
    "--set", "data.n_val=16",
    "--set", "data.n_test=48",
    "--set", "data.image_size=16",
    "--set", "model.image_size=16",
    "--set", "model.mask_size=8",
    "--set", "model.backbone_widths=4,6,8",
    "--set", "train.epochs=1",
];

fn cli<S: AsRef<OsStr>>(out: &Path, args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anatomy-attn"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("ANATOMY_ATTN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn tiny(args: &[&str]) -> Vec<String> {
    TINY.iter().chain(args).map(|s| s.to_string()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["--set", "model.dropout=0.1", "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.dropout"));

    let cfg = dir.path().join("bad.ini");
    fs::write(&cfg, "[train]\nepochs = 1\nwarmup = 3\n").unwrap();
    let o = cli(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.warmup"));

    let o = cli(dir.path(), &["ablate", "--axis", "dropout"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = cli(dir.path(), &["gradcheck", "--only", "ops"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let table = String::from_utf8_lossy(&ok.stdout).into_owned();
    assert!(table.contains("ops/conv3x3"));
    assert!(fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap().starts_with("target,"));

    let fault = cli(dir.path(), &["gradcheck", "--only", "ops", "--inject-fault", "exp"]);
    assert_eq!(fault.status.code(), Some(1));
    assert!(stderr(&fault).contains("ops/exp"));
    assert!(!stderr(&fault).contains("ops/add,"));

    let tight = cli(dir.path(), &["gradcheck", "--only", "ops", "--tol", "1e-12"]);
    assert_eq!(tight.status.code(), Some(1));
}

#[test]
fn ablate_writes_one_row_block_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &tiny(&["ablate", "--axis", "attention", "--seeds", "1,2,3"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("ablation_attention_level.csv")).unwrap();
    let means: Vec<&str> = csv
        .lines()
        .filter(|l| l.split(',').nth(1) == Some("mean"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(means, ["baseline", "aaa-l1", "aaa-l2", "aaa-l3"]);
    let echoed = fs::read_to_string(dir.path().join("config.ini")).unwrap();
    assert!(echoed.contains("seeds = 1,2,3"));
    assert!(echoed.contains("backbone_widths = 4,6,8"));
}

#[test]
fn robustness_rows_cover_every_window_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(
        dir.path(),
        &tiny(&["robustness", "--windows", "0,2,4,6,8,10,12", "--seeds", "1", "--trials", "1"]),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("robustness.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 14);
    for model in ["aaa", "hardmask"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{model},"))).count(), 7);
    }
    assert!(dir.path().join("robustness_degradation.csv").exists());
}

#[test]
fn gradcam_writes_one_heatmap_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    let o = cli(&ckpt, &tiny(&["train"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cams = dir.path().join("cams");
    let o = cli(
        &cams,
        &tiny(&["gradcam", "--checkpoint", ckpt.to_str().unwrap(), "--class", "0", "--stage", "last", "--images", "0,2,5"]),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in [0, 2, 5] {
        let bytes = fs::read(cams.join(format!("gradcam_class0_{i}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(bytes.len(), b"P5\n16 16\n255\n".len() + 256);
    }
    let o = cli(&cams, &tiny(&["gradcam", "--checkpoint", ckpt.to_str().unwrap(), "--class", "0", "--stage", "top"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_reproduce_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = cli(out, &tiny(&["--seed", "4", "train"]));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = cli(out, &["--seed", "4", "--set", "seg.steps=5", "seg-toy"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["history.csv", "test_metrics.csv", "seg_loss_seed4.csv", "seg_summary.csv", "model.bin"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = cli(&first, &tiny(&["--seed", "2", "train"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let second = dir.path().join("second");
    let cfg = first.join("config.ini");
    let o = cli(&second, &["--seed", "2", "--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(first.join("test_metrics.csv")).unwrap(),
        fs::read(second.join("test_metrics.csv")).unwrap()
    );
}
