//! The `afdet` binary end to end: exit codes, file outputs and JSON reports.

use std::path::Path;
use std::process::{Command, Output};

use afdet_core::data::{load_coco_subset, read_image};
use afdet_core::{iou, BBox, RunConfig};
use serde_json::Value;

fn afdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afdet"))
        .args(args)
        .env_remove("AFDET_THREADS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = afdet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A COCO file with one 64×64 image holding `boxes` (`[x, y, w, h]`, class 0).
fn coco_file(dir: &Path, boxes: &[[f64; 4]]) -> std::path::PathBuf {
    let annotations: Vec<Value> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| serde_json::json!({"id": i + 1, "image_id": 1, "category_id": 1, "bbox": b}))
        .collect();
    let file = serde_json::json!({
        "images": [{"id": 1, "file_name": "a.png", "width": 64, "height": 64}],
        "annotations": annotations,
        "categories": [{"id": 1, "name": "thing"}],
    });
    let p = dir.join("ann.json");
    std::fs::write(&p, file.to_string()).unwrap();
    p
}

#[test]
fn help_lists_every_config_key() {
    let out = afdet(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for (key, default) in RunConfig::default_keys() {
        let line = text.lines().find(|l| l.split_whitespace().next() == Some(key.as_str()));
        let line = line.unwrap_or_else(|| panic!("{key} missing from --help"));
        assert!(line.trim_end().ends_with(&default), "{line}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(afdet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(afdet(&["flops", "--set", "image_width=30"]).status.code(), Some(1));
    assert_eq!(afdet(&["flops", "--config", "/nonexistent/cfg.json"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.afdet");
    let out = afdet(&["decode", "--input", path(&missing)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_afdet"))
        .args(["flops"])
        .env("AFDET_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn encode_viz_marks_the_box_center() {
    let dir = tempfile::tempdir().unwrap();
    let ann = coco_file(dir.path(), &[[18.0, 26.0, 20.0, 12.0]]);
    let out = dir.path().join("enc");
    let r = ok_json(&["encode", "--annotations", path(&ann), "--viz", "--out", path(&out), "--set", "model.num_classes=1"]);
    assert_eq!(r["num_objects"], 1);
    let heat = read_image(&out.join("heatmap_c0.png")).unwrap();
    // box center (28, 32) → cell (7, 8) at stride 4
    let (h, w) = (heat.dim(1), heat.dim(2));
    assert_eq!((h, w), (16, 16));
    let peak = (0..h * w).max_by(|&a, &b| heat.data()[a].total_cmp(&heat.data()[b])).unwrap();
    assert_eq!((peak % w, peak / w), (7, 8));
    assert_eq!(heat.data()[peak], 1.0);

    let dets = ok_json(&["decode", "--input", r["container"].as_str().unwrap()]);
    let d = &dets["detections"][0]["bbox"];
    let got = BBox::new(
        d["x_min"].as_f64().unwrap(),
        d["y_min"].as_f64().unwrap(),
        d["x_max"].as_f64().unwrap(),
        d["y_max"].as_f64().unwrap(),
    );
    assert!(iou(&got, &BBox::from_xywh(18.0, 26.0, 20.0, 12.0)) >= 0.99, "{got:?}");
}

#[test]
fn empty_annotation_renders_black() {
    let dir = tempfile::tempdir().unwrap();
    let ann = coco_file(dir.path(), &[]);
    let out = dir.path().join("enc");
    ok_json(&["encode", "--annotations", path(&ann), "--viz", "--out", path(&out), "--set", "model.num_classes=1"]);
    let heat = read_image(&out.join("heatmap_c0.png")).unwrap();
    assert!(heat.data().iter().all(|&v| v == 0.0));
    let dets = ok_json(&["decode", "--input", path(&out.join("targets.afdet"))]);
    assert_eq!(dets["detections"].as_array().unwrap().len(), 0);
}

#[test]
fn augment_outputs_reload_and_follow_the_laws() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "image_height=64", "--set", "image_width=64", "--set", "dataset.synth_images=3"];

    let grid = dir.path().join("grid");
    let mut args = vec!["augment", "--op", "gridmask", "--out", path(&grid)];
    args.extend(small);
    ok_json(&args);
    let idx = load_coco_subset(&grid.join("annotations.json"), &grid).unwrap();
    assert_eq!(idx.images.len(), 3);
    for r in &idx.images {
        let img = read_image(&r.path).unwrap();
        let hw = 64 * 64;
        let zero_px = (0..hw).filter(|&i| (0..3).all(|c| img.data()[c * hw + i] == 0.0)).count();
        assert!(zero_px > 0, "{} has no masked pixels", r.file_name);
    }

    let plain = dir.path().join("plain");
    let mut args = vec!["augment", "--op", "mixup", "--lambda", "1", "--out", path(&plain)];
    args.extend(small);
    ok_json(&args);
    let cut = dir.path().join("cut");
    let mut args = vec!["augment", "--op", "cutmix", "--lambda", "0.999", "--out", path(&cut)];
    args.extend(small);
    ok_json(&args);
    for i in 0..3 {
        let name = format!("aug_{i:04}.png");
        let (a, b) = (read_image(&plain.join(&name)).unwrap(), read_image(&cut.join(&name)).unwrap());
        let differing = (0..64 * 64)
            .filter(|&p| (0..3).any(|c| a.data()[c * 4096 + p] != b.data()[c * 4096 + p]))
            .count();
        // patch side rounds to at most ceil(64·√0.001) = 3 pixels
        assert!(differing <= 9, "{name}: {differing} pixels differ");
    }

    let mut args = vec!["augment", "--op", "cutmix", "--out", path(&cut), "--set", "dataset.synth_images=1"];
    args.extend(&small[..4]);
    let out = afdet(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("single input"), "{}", stderr(&out));
}

fn tiny_run(dir: &Path) -> Vec<String> {
    [
        "--set",
        "image_height=32",
        "--set",
        "image_width=32",
        "--set",
        "dataset.synth_images=4",
        "--set",
        "train.batch_size=2",
        "--out",
        path(dir),
    ]
    .map(String::from)
    .to_vec()
}

fn run_owned(args: Vec<String>) -> Output {
    afdet(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn train_twice_is_identical_and_eval_reports_all_thresholds() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for d in [&a, &b] {
        let mut args = vec!["train".to_string(), "--iterations".into(), "3".into()];
        args.extend(tiny_run(d));
        let out = run_owned(args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    // config.json differs only in output_dir
    for f in ["metrics.jsonl", "last.afdet"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let log = std::fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["schema", "iteration", "lr", "loc", "reg", "total", "w_loc", "w_reg"] {
        assert!(first.get(key).is_some(), "metrics line lacks {key}");
    }

    for ema in [false, true] {
        let mut args = vec!["eval".to_string()];
        if ema {
            args.push("--ema".into());
        }
        args.extend(tiny_run(&a));
        let out = run_owned(args);
        assert!(out.status.success(), "{}", stderr(&out));
        let r: Value = serde_json::from_slice(&out.stdout).unwrap();
        let ious: Vec<f64> = r["thresholds"].as_array().unwrap().iter().map(|t| t["iou"].as_f64().unwrap()).collect();
        assert_eq!(ious.len(), 10);
        assert!((ious[0] - 0.5).abs() < 1e-12 && (ious[9] - 0.95).abs() < 1e-12);
        assert!(r["map"].as_f64().unwrap() < 0.05, "barely trained model scores {}", r["map"]);
    }
}

#[test]
fn incompatible_checkpoint_names_the_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train".to_string(), "--iterations".into(), "0".into()];
    args.extend(tiny_run(dir.path()));
    assert!(run_owned(args).status.success());
    let mut args = vec!["eval".to_string(), "--set".into(), "model.head_width=32".into()];
    args.extend(tiny_run(dir.path()));
    let out = run_owned(args);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("has shape") && msg.contains("expects"), "{msg}");
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let mut args = vec!["train".to_string(), "--iterations".into(), "1".into()];
    args.extend(tiny_run(&blocker.join("sub")));
    assert_eq!(run_owned(args).status.code(), Some(2));
}

#[test]
fn flops_and_bench_reports() {
    let f = ok_json(&["flops"]);
    let ratio = f["lite_vs_plain"]["ratio"].as_f64().unwrap();
    assert!((ratio - 0.1217).abs() < 1e-4);
    let rows: u64 = f["rows"].as_array().unwrap().iter().map(|r| r["macs"].as_u64().unwrap()).sum();
    assert_eq!(rows, f["total"].as_u64().unwrap());
    let big = ok_json(&["flops", "--height", "256", "--width", "256"]);
    assert_eq!(big["conv_total"].as_u64().unwrap(), 4 * f["conv_total"].as_u64().unwrap());

    let b = ok_json(&["bench", "--iters", "50", "--set", "image_height=64", "--set", "image_width=64"]);
    let stages: Vec<&str> = b["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["encode", "decode", "loss_fwd_bwd", "model_forward"]);
    for s in b["stages"].as_array().unwrap() {
        assert!(s["median_ms"].as_f64().unwrap() <= s["p95_ms"].as_f64().unwrap());
    }
    // loose budget: 10 ms on a quiet core, with headroom for busy CI
    assert!(b["stages"][1]["median_ms"].as_f64().unwrap() < 50.0);
}

#[test]
fn dump_heatmap_writes_both_maps() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["dump-heatmap".to_string(), "--index".into(), "1".into()];
    args.extend(tiny_run(dir.path()));
    let out = run_owned(args);
    assert!(out.status.success(), "{}", stderr(&out));
    for prefix in ["pred", "gt"] {
        for c in 0..3 {
            assert!(dir.path().join(format!("{prefix}_0001_c{c}.png")).is_file());
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let root = tempfile::tempdir().unwrap();
    let dirs = [root.path().join("t1"), root.path().join("t3")];
    for (d, threads) in dirs.iter().zip(["1", "3"]) {
        let mut args = vec!["train".to_string(), "--iterations".into(), "2".into()];
        args.extend(tiny_run(d));
        let out = Command::new(env!("CARGO_BIN_EXE_afdet")).args(&args).env("AFDET_THREADS", threads).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for f in ["metrics.jsonl", "last.afdet"] {
        assert_eq!(std::fs::read(dirs[0].join(f)).unwrap(), std::fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
}
