use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cellseg_core::ctc::write_label_mask;
use cellseg_core::grid::{Grid, LabelMap};
use cellseg_core::schedule::Scheme;
use cellseg_core::trainer::synth::{CorpusSpec, PseudoDataset};
use cellseg_core::trainer::RunConfig;

fn cellseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellseg")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_corpus_toml() -> String {
    let base = CorpusSpec::benchmark().datasets[0].clone();
    let small = |name: &str, fg: f64, bg: f64| PseudoDataset {
        name: name.into(),
        sequences: 1,
        frames: 11,
        height: 24,
        width: 24,
        min_cells: 1,
        max_cells: 2,
        min_radius: 4.0,
        max_radius: 6.0,
        foreground: fg,
        background: bg,
        ..base.clone()
    };
    toml::to_string(&CorpusSpec { datasets: vec![small("alpha", 0.8, 0.2), small("beta", 0.3, 0.7)] }).unwrap()
}

/// Writes a tiny two-dataset corpus and a short training config next to it.
fn tiny_setup(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    fs::write(dir.join("corpus.toml"), tiny_corpus_toml()).unwrap();
    let data = dir.join("data");
    let o = cellseg(&["synth", "--out", p(&data), "--seed", "3", "--config", p(&dir.join("corpus.toml"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut cfg = RunConfig::desk_default(vec!["alpha".into(), "beta".into()], 5);
    cfg.scheme = Scheme::Acc;
    cfg.epochs = 2;
    cfg.draws_per_dataset = 2;
    cfg.validation_period = 1;
    cfg.loader.crop_size = 16;
    cfg.loader.batch_size = 2;
    cfg.post.min_area = 4;
    cfg.data_root = Some(data.clone());
    let config = dir.join("train.toml");
    fs::write(&config, cfg.to_toml().unwrap()).unwrap();
    (data, config)
}

fn strip(cols: std::ops::Range<usize>, label: u32) -> LabelMap {
    Grid::from_fn(2, 20, |_, c| if cols.contains(&c) { label } else { 0 })
}

#[test]
fn synth_is_reproducible_and_records_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.toml"), tiny_corpus_toml()).unwrap();
    let corpus = dir.path().join("corpus.toml");
    for name in ["a", "b"] {
        assert_eq!(code(&cellseg(&["synth", "--out", p(&dir.path().join(name)), "--seed", "9", "--config", p(&corpus)])), 0);
    }
    for rel in ["alpha/01/t000.tif", "alpha/01_GT/SEG/man_seg010.tif", "beta/01/t005.tif", "train.toml"] {
        assert_eq!(fs::read(dir.path().join("a").join(rel)).unwrap(), fs::read(dir.path().join("b").join(rel)).unwrap(), "{rel}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["command"], "synth");
    // Without a seed one is drawn and recorded.
    assert_eq!(code(&cellseg(&["synth", "--out", p(&dir.path().join("c")), "--config", p(&corpus)])), 0);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("c/manifest.json")).unwrap()).unwrap();
    assert!(manifest["seed"].is_u64());
}

#[test]
fn prepare_writes_targets_and_reports_missing_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_setup(dir.path());
    let out = dir.path().join("targets");
    let o = cellseg(&["prepare", "--data", p(&data.join("alpha")), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("01_GT/tertiary000.tif").is_file());
    assert!(out.join("01_GT/tertiary010.tif").is_file());
    assert!(out.join("manifest.json").is_file());

    let bare = dir.path().join("bare");
    fs::create_dir_all(bare.join("01")).unwrap();
    fs::copy(data.join("alpha/01/t000.tif"), bare.join("01/t000.tif")).unwrap();
    assert_eq!(code(&cellseg(&["prepare", "--data", p(&bare), "--out", p(&dir.path().join("x"))])), 2);
    assert_eq!(code(&cellseg(&["prepare", "--data", p(&dir.path().join("nowhere")), "--out", p(&dir.path().join("y"))])), 2);
}

#[test]
fn eval_scores_identity_and_the_partial_overlap_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&pred).unwrap();
    write_label_mask(&strip(0..10, 1), &gt.join("man_seg000.tif")).unwrap();
    write_label_mask(&strip(0..10, 1), &pred.join("mask000.tif")).unwrap();
    let o = cellseg(&["eval", "--gt", p(&gt), "--pred", p(&pred), "--min-seg", "1.0"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean SEG 1.000000"));

    write_label_mask(&strip(4..14, 7), &pred.join("mask000.tif")).unwrap();
    let out = dir.path().join("report");
    let o = cellseg(&["eval", "--gt", p(&gt), "--pred", p(&pred), "--out", p(&out), "--dataset", "strip"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean SEG 0.428571"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("seg.json")).unwrap()).unwrap();
    assert!((json["mean"].as_f64().unwrap() - 6.0 / 14.0).abs() < 1e-12);
    assert_eq!(json["datasets"][0]["dataset"], "strip");

    assert_eq!(code(&cellseg(&["eval", "--gt", p(&gt), "--pred", p(&pred), "--min-seg", "0.5"])), 1);
    write_label_mask(&strip(0..10, 1), &gt.join("man_seg001.tif")).unwrap();
    assert_eq!(code(&cellseg(&["eval", "--gt", p(&gt), "--pred", p(&pred)])), 2);
}

#[test]
fn train_is_bitwise_reproducible_and_feeds_infer_and_track() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = tiny_setup(dir.path());
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    for r in [&r1, &r2] {
        let o = cellseg(&["train", "--config", p(&config), "--out", p(r)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["history.csv", "best.ckpt", "final.ckpt", "summary.json", "config.toml"] {
        assert_eq!(fs::read(r1.join(f)).unwrap(), fs::read(r2.join(f)).unwrap(), "{f}");
    }
    let o = cellseg(&["train", "--config", p(&config), "--out", p(&dir.path().join("r3")), "--seed", "6"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(r1.join("final.ckpt")).unwrap(), fs::read(dir.path().join("r3/final.ckpt")).unwrap());

    let res = dir.path().join("res");
    let o = cellseg(&["infer", "--checkpoint", p(&r1.join("best.ckpt")), "--data", p(&data.join("alpha")), "--out", p(&res)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in 0..11 {
        assert!(res.join(format!("01_RES/mask{f:03}.tif")).is_file());
    }
    let o = cellseg(&["eval", "--gt", p(&data.join("alpha")), "--pred", p(&res)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let tracked = dir.path().join("tracked");
    let o = cellseg(&["track", "--masks", p(&data.join("alpha")), "--data", p(&data.join("alpha")), "--out", p(&tracked), "--gate", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tracks = fs::read_to_string(tracked.join("01_RES/res_track.txt")).unwrap();
    assert!(!tracks.is_empty());
    assert!(tracks.lines().all(|l| l.split(' ').count() == 4));
    assert!(tracked.join("01_RES/mask010.tif").is_file());
}

#[test]
fn bad_inputs_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "version = 1\nnonsense = true\n").unwrap();
    assert_eq!(code(&cellseg(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("o"))])), 2);
    assert_eq!(code(&cellseg(&["train", "--config", p(&dir.path().join("absent.toml")), "--out", p(&dir.path().join("o"))])), 2);
    assert_eq!(code(&cellseg(&["infer", "--checkpoint", p(&cfg), "--data", p(dir.path()), "--out", p(&dir.path().join("o"))])), 2);
    assert_eq!(code(&cellseg(&["frobnicate"])), 2);
    assert!(!dir.path().join("o").exists());
}
