use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn galnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_galnet")).args(args).output().expect("spawn galnet")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, modality: &str, n: &str, hw: &str, seed: &str) {
    let out = galnet(&["synth", "--modality", modality, "--n", n, "--hw", hw, "--seed", seed, "--out", p(dir)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn synth_writes_images_labels_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    synth(&dir, "rgb", "3", "16x20", "2");
    let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert_eq!(manifest.lines().next().unwrap(), "rgb-0000 rgb rgb-0000.galt rgb-0000.label.pgm");
    let label = fs::read(dir.join("rgb-0002.label.pgm")).unwrap();
    assert!(label.starts_with(b"P5\n20 16\n255\n"));
    assert!(label[13..].iter().all(|&v| v == 0 || v == 255));
    assert!(fs::read(dir.join("rgb-0001.galt")).unwrap().starts_with(b"GALT"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = p(tmp.path());
    for args in [
        vec!["synth", "--modality", "rgb", "--n", "0", "--out", out],
        vec!["synth", "--modality", "rgb", "--n", "2", "--hw", "10x12", "--out", out],
        vec!["synth", "--modality", "lidar", "--n", "2", "--out", out],
        vec!["gradcheck", "--size", "3x3x3"],
        vec!["gradcheck", "--size", "3x3"],
        vec!["gradcheck", "--inject-fault", "nope"],
        vec!["eval", "--manifest", "m.txt"],
        vec!["frobnicate"],
    ] {
        assert_eq!(galnet(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn train_needs_exactly_one_variant_flag() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    synth(&dir, "tdisp", "2", "8x8", "0");
    let m = dir.join("manifest.txt");
    let ck = tmp.path().join("ck");
    let neither = galnet(&["train", "--manifest", p(&m), "--epochs", "1", "--out-checkpoint", p(&ck)]);
    assert_eq!(neither.status.code(), Some(2));
    let both = galnet(&["train", "--manifest", p(&m), "--with-gal", "--no-gal", "--out-checkpoint", p(&ck)]);
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    synth(&dir, "tdisp", "4", "16x16", "5");
    let m = dir.join("manifest.txt");
    let ck = tmp.path().join("ck");
    let out = galnet(&["train", "--manifest", p(&m), "--with-gal", "--epochs", "2", "--seed", "3", "--out-checkpoint", p(&ck)]);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let log = fs::read_to_string(ck.join("loss.log")).unwrap();
    let mut lines = log.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# galnet train seed=3 with_gal=true"), "{header}");
    assert!(header.contains("epochs=2"));
    assert_eq!(lines.next(), Some("epoch\tloss"));
    assert_eq!(lines.filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 2);
    assert!(ck.join("gal.mod_w.galt").exists() && ck.join("config.txt").exists());

    let maps = tmp.path().join("maps");
    let out = galnet(&["eval", "--manifest", p(&m), "--checkpoint", p(&ck), "--folds", "2", "--out", p(&maps)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report = text(&out.stdout);
    assert!(report.starts_with("# galnet eval checkpoint="));
    assert!(report.contains("\nfold\tpre\trec\tacc\tfsc\tiou\n"));
    for key in ["mPre", "mRec", "mAcc", "mFsc", "mIoU"] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{key}\t"))), "{key}");
    }
    let act = fs::read(maps.join("tdisp-0000.act.pgm")).unwrap();
    assert!(act.starts_with(b"P5\n4 4\n255\n"));
    assert!(fs::read(maps.join("tdisp-0003.pred.pgm")).unwrap().starts_with(b"P5\n16 16\n255\n"));
}

#[test]
fn wrong_modality_checkpoint_names_the_first_layer() {
    let tmp = TempDir::new().unwrap();
    let (gray, rgb) = (tmp.path().join("g"), tmp.path().join("c"));
    synth(&gray, "disp", "2", "8x8", "1");
    synth(&rgb, "rgb", "2", "8x8", "1");
    let ck = tmp.path().join("ck");
    let out = galnet(&[
        "train", "--manifest", p(&gray.join("manifest.txt")), "--no-gal", "--epochs", "1", "--out-checkpoint", p(&ck),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let out = galnet(&["eval", "--manifest", p(&rgb.join("manifest.txt")), "--checkpoint", p(&ck)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("enc1.kernel"), "{}", text(&out.stderr));
}

#[test]
fn mixed_manifest_is_refused() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "disp", "1", "8x8", "1");
    synth(&b, "tdisp", "1", "8x8", "1");
    let mixed = tmp.path().join("mixed.txt");
    fs::write(&mixed, "one disp a/disp-0000.galt a/disp-0000.label.pgm\ntwo tdisp b/tdisp-0000.galt b/tdisp-0000.label.pgm\n").unwrap();
    let out = galnet(&["eval", "--manifest", p(&mixed), "--oracle"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("mixes modalities"));
}

#[test]
fn oracle_scores_one_everywhere() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    synth(&dir, "disp", "9", "8x8", "4");
    let out = galnet(&["eval", "--manifest", p(&dir.join("manifest.txt")), "--oracle", "--folds", "3"]);
    assert!(out.status.success());
    let report = text(&out.stdout);
    assert_eq!(report.lines().filter(|l| l.ends_with("1.000\t1.000\t1.000\t1.000\t1.000")).count(), 3);
    assert!(report.ends_with("mIoU\t1.000\n"));
    let bad = galnet(&["eval", "--manifest", p(&dir.join("manifest.txt")), "--oracle", "--reference-folds"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_every_check_and_flags_a_fault() {
    let clean = galnet(&["gradcheck", "--size", "3x4x4", "--seed", "2"]);
    assert!(clean.status.success());
    let report = text(&clean.stdout);
    assert_eq!(report.lines().filter(|l| l.ends_with("\tok")).count(), 21);

    let broken = galnet(&["gradcheck", "--size", "3x3x2", "--inject-fault", "gather_rows"]);
    assert_eq!(broken.status.code(), Some(1));
    let failed: Vec<String> =
        text(&broken.stdout).lines().filter(|l| l.ends_with("FAIL")).map(|l| l.split('\t').next().unwrap().to_string()).collect();
    assert!(failed.contains(&"gather_rows".to_string()), "{failed:?}");
    assert!(failed.contains(&"gal/layer".to_string()));
    assert!(!failed.contains(&"matmul".to_string()));
    assert!(text(&broken.stderr).contains("gather_rows"));
}

#[test]
fn bench_prints_paired_rows_and_a_mean() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    synth(&dir, "tdisp", "4", "8x8", "6");
    let out = galnet(&["bench", "--manifest", p(&dir.join("manifest.txt")), "--seeds", "2", "--seed", "5", "--folds", "2", "--epochs", "1"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report = text(&out.stdout);
    let rows: Vec<&str> = report.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "seed\tmIoU_gal\tmIoU_base\tdIoU\tmFsc_gal\tmFsc_base\tdFsc");
    assert!(rows[1].starts_with("5\t") && rows[2].starts_with("6\t") && rows[3].starts_with("mean\t"));
    assert!(report.lines().last().unwrap().starts_with("# attention wins "));
}

#[test]
fn overfits_a_small_tdisp_set() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    synth(&dir, "tdisp", "24", "32x32", "7");
    let m = dir.join("manifest.txt");
    let ck = tmp.path().join("ck");
    let out = galnet(&[
        "train", "--manifest", p(&m), "--with-gal", "--epochs", "300", "--no-augment", "--seed", "1",
        "--out-checkpoint", p(&ck),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let out = galnet(&["eval", "--manifest", p(&m), "--checkpoint", p(&ck)]);
    let miou: f64 = text(&out.stdout).lines().find_map(|l| l.strip_prefix("mIoU\t")).unwrap().parse().unwrap();
    assert!(miou > 0.9, "training-set mIoU {miou}");
}
