use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use canon_core::geom::io::load_map;
use canon_core::geom::IndexMap;
use canon_core::train::load_checkpoint;

fn canonmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canonmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = canonmatch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, pairs: &str, partial: &str, seed: &str) {
    ok(&[
        "gen",
        "--out",
        s(dir),
        "--pairs",
        pairs,
        "--points",
        "600",
        "--partial",
        partial,
        "--seed",
        seed,
    ]);
}

#[test]
fn gen_writes_two_clouds_three_maps_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    gen(&dir, "1", "none", "3");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "manifest.json",
            "pair_0000_map_xy.map",
            "pair_0000_sym_x.map",
            "pair_0000_sym_y.map",
            "pair_0000_x.xyz",
            "pair_0000_y.xyz"
        ]
    );
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "2", "hole", "9");
    gen(&b, "2", "hole", "9");
    for e in fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn cut_manifest_records_removed_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cut");
    gen(&dir, "4", "cut", "1");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["generator"]["partial"], "cut");
    for p in m["pairs"].as_array().unwrap() {
        let f = p["removed_fraction"].as_f64().unwrap();
        assert!((0.25..=0.45).contains(&f), "{f}");
    }
}

#[test]
fn train_match_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "3", "none", "5");
    let ckpt = tmp.path().join("run/model.json");
    let args = [
        "train",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--k",
        "8",
        "--points",
        "64",
        "--batch-size",
        "2",
        "--epochs",
        "2",
    ];
    ok(&args);
    let log = fs::read_to_string(tmp.path().join("run/model.log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iter,l_euc,l_lin,l_comm,l_total,wall_ms"));
    // 3 pairs in batches of 2 for 2 epochs
    assert_eq!(lines.count(), 4);
    let c = load_checkpoint(&ckpt).unwrap();
    assert_eq!(c.iteration, 4);
    assert_eq!(c.config.k, 8);

    // a cloud matched to itself gives the identity
    let x = data.join("pair_0000_x.xyz");
    let map = tmp.path().join("self.map");
    ok(&[
        "match",
        "--ckpt",
        s(&ckpt),
        "--source",
        s(&x),
        "--target",
        s(&x),
        "--out",
        s(&map),
    ]);
    assert_eq!(load_map(&map).unwrap(), IndexMap::identity(600));

    // requesting a different k is an incompatibility, a data error
    let out = canonmatch(&[
        "match",
        "--ckpt",
        s(&ckpt),
        "--source",
        s(&x),
        "--target",
        s(&x),
        "--out",
        s(&map),
        "--k",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(3));

    let report = tmp.path().join("report");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&report)]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    let csv = fs::read_to_string(report.join("report.csv")).unwrap();
    let csv_mean: f64 = csv
        .lines()
        .last()
        .unwrap()
        .strip_prefix("mean_x100,")
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(json["mean_x100"].as_f64().unwrap(), csv_mean);
    assert_eq!(json["meta"]["normalization"], "geodesic_diameter");
    assert!(report.join("pair_0002_pred.map").exists());

    ok(&["eval", "--raw", "--data", s(&data), "--out", s(&tmp.path().join("raw"))]);
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "1", "none", "2");
    let ckpt = tmp.path().join("init.json");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--epochs",
        "0",
        "--seed",
        "4",
    ]);
    let c = load_checkpoint(&ckpt).unwrap();
    assert_eq!(c.iteration, 0);
    assert_eq!(c.params, canon_core::net::init_encoder(24, 4).unwrap());
    let log = fs::read_to_string(tmp.path().join("init.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "1", "none", "2");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"k": 10, "mode": "partial", "epochs": 0}"#).unwrap();
    let ckpt = tmp.path().join("m.json");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&ckpt),
        "--k",
        "12",
    ]);
    let c = load_checkpoint(&ckpt).unwrap();
    assert_eq!(c.config.k, 12);
    assert_eq!((c.config.lambda, c.config.gamma), (1.0, 0.1));

    fs::write(&cfg, r#"{"k": 10, "bogus": 1}"#).unwrap();
    let out = canonmatch(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    assert_eq!(canonmatch(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(canonmatch(&[]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = canonmatch(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(3));
    let help = String::from_utf8(ok(&["train", "--help"]).stdout).unwrap();
    for flag in [
        "--data",
        "--config",
        "--out",
        "--log",
        "--timing",
        "--mode",
        "--k",
        "--points",
        "--batch-size",
        "--lr",
        "--epochs",
        "--lambda",
        "--gamma",
        "--eps",
        "--seed",
        "--pairs",
        "--rotate",
        "--max-yaw-deg",
    ] {
        assert!(help.contains(flag), "help lacks {flag}");
    }
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, test) = (tmp.path().join("train"), tmp.path().join("test"));
    gen(&train, "2", "none", "1");
    ok(&[
        "gen",
        "--out",
        s(&test),
        "--pairs",
        "1",
        "--points",
        "600",
        "--seed",
        "2",
    ]);
    let out = tmp.path().join("sweep.csv");
    ok(&[
        "sweep",
        "--data",
        s(&train),
        "--test",
        s(&test),
        "--axis",
        "embedding_size",
        "--values",
        "4,6",
        "--out",
        s(&out),
        "--points",
        "32",
        "--epochs",
        "1",
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some("embedding_size,mean_x100"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn gradcheck_exits_zero() {
    let out = ok(&["gradcheck", "--reps", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("ok")), "{text}");
}
