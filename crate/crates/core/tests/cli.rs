use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use signkit::model::{load_dataset, save_dataset};
use signkit::toy::{geotagged_metadata, simulated_proposals, toy_corpus, ToyOptions};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn signkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

// Computed offline by a brute-force Python evaluator over the same fixture
// (every distinct score threshold, explicit envelope).
const AP50: [(u64, f64); 3] = [(1, 70.95238095238094), (2, 83.33333333333333), (3, 83.33333333333333)];
const MAP50: f64 = 79.20634920634919;
const MAP50_95: f64 = 48.920634920634924;
const MAX_RECALL: f64 = 91.66666666666666;

#[test]
fn validate_accepts_fixture() {
    let out = signkit(&["validate", "--dataset", p(&fixture("eval_gt.json"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["tool"], "signkit");
    assert_eq!(report["command"], "validate");
    assert_eq!(report["result"]["valid"], true);
    assert_eq!(report["result"]["instances"], 10);
    assert_eq!(report["result"]["difficult"], 1);
}

#[test]
fn validate_flags_broken_references_and_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw: Value = serde_json::from_str(&std::fs::read_to_string(fixture("eval_gt.json")).unwrap()).unwrap();
    raw["annotations"][0]["image_id"] = 99.into();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, raw.to_string()).unwrap();
    let out = signkit(&["validate", "--dataset", p(&bad)]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["result"]["valid"], false);

    // the fixture is far too small for the 20-instance rule
    let out = signkit(&["validate", "--criteria", "--dataset", p(&fixture("eval_gt.json"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    assert_eq!(code(&signkit(&["validate", "--no-such-flag"])), 2);
    assert_eq!(code(&signkit(&["frobnicate"])), 2);
    assert_eq!(code(&signkit(&["validate"])), 2, "missing --dataset");
    assert_eq!(code(&signkit(&["validate", "--dataset", "/nonexistent/ds.json"])), 3);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"iou": 0.5, "bogus": 1}"#).unwrap();
    let out = signkit(&["eval", "--config", p(&cfg), "--dataset", p(&fixture("eval_gt.json"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn eval_matches_brute_force_reference() {
    let out = signkit(&[
        "eval",
        "--dataset",
        p(&fixture("eval_gt.json")),
        "--detections",
        p(&fixture("eval_dets.jsonl")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = &stdout_json(&out)["result"];
    let close = |v: &Value, want: f64| (v.as_f64().unwrap() - want).abs() < 1e-9;
    assert!(close(&r["map50"], MAP50), "map50 {}", r["map50"]);
    assert!(close(&r["map50_95"], MAP50_95), "map50_95 {}", r["map50_95"]);
    assert!(close(&r["max_recall"], MAX_RECALL), "max_recall {}", r["max_recall"]);
    for (cat, want) in AP50 {
        let c = r["categories"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["category_id"] == cat)
            .unwrap();
        assert!(close(&c["ap50"], want), "category {cat}: {}", c["ap50"]);
    }
    // 101-point sampling is reported next to the default envelope area
    assert!(r["map50_coco101"].as_f64().unwrap() > 0.0);
}

#[test]
fn flags_override_config_file_and_reports_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "dataset": fixture("eval_gt.json"),
            "detections": fixture("eval_dets.jsonl"),
            "protocol": "stsd",
            "interpolation": "coco101",
        })
        .to_string(),
    )
    .unwrap();
    let first = dir.path().join("first.json");
    let out = signkit(&["eval", "--config", p(&cfg), "--interpolation", "all-points", "--out", p(&first)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&first).unwrap()).unwrap();
    assert_eq!(report["config"]["protocol"], "stsd", "file value survives");
    assert_eq!(report["config"]["interpolation"], "all_points", "flag wins");
    assert_eq!(report["result"]["config"]["min_size"], 50.0);

    // a whole report is accepted as --config and reproduces the run
    let second = dir.path().join("second.json");
    let out = signkit(&["eval", "--config", p(&first), "--out", p(&second)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let replay: Value = serde_json::from_str(&std::fs::read_to_string(&second).unwrap()).unwrap();
    assert_eq!(replay["result"], report["result"]);
}

#[test]
fn split_is_reproducible_and_feeds_proposal_tools() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("meta.json");
    save_dataset(&geotagged_metadata(300, 8, 3), &ds_path).unwrap();
    let run = |name: &str, seed: &str| {
        let out_path = dir.path().join(name);
        let out = signkit(&["split", "--dataset", p(&ds_path), "--seed", seed, "--out", p(&out_path)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (stdout_json(&out), std::fs::read_to_string(out_path).unwrap())
    };
    let (report, a) = run("a.json", "5");
    let (_, b) = run("b.json", "5");
    assert_eq!(a, b);
    assert_eq!(report["seed"], 5);
    let per_category = report["result"]["per_category"].as_object().unwrap();
    assert_eq!(per_category.len(), 8);
    for counts in per_category.values() {
        let (train, test) = (counts["train"].as_u64().unwrap(), counts["test"].as_u64().unwrap());
        assert!(4 * test >= train + test, "{counts}");
    }

    let proposals = dir.path().join("proposals.jsonl");
    let ds = load_dataset(&ds_path).unwrap().dataset;
    let lines: Vec<String> = simulated_proposals(&ds, 40, 1)
        .iter()
        .map(|c| serde_json::to_string(c).unwrap())
        .collect();
    std::fs::write(&proposals, lines.join("\n")).unwrap();
    let out = signkit(&[
        "proposals",
        "--dataset",
        p(&ds_path),
        "--proposals",
        p(&proposals),
        "--split",
        p(&dir.path().join("a.json")),
        "--top-n",
        "5,40",
        "--min-size",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let grid = &stdout_json(&out)["result"]["recall"];
    assert!(grid[1][0].as_f64().unwrap() >= grid[0][0].as_f64().unwrap());

    for strategy in ["ohem", "balanced", "pass-through"] {
        let out = signkit(&["sample-rois", "--candidates", p(&proposals), "--strategy", strategy, "--budget", "16"]);
        assert_eq!(code(&out), 0, "{strategy}: {}", String::from_utf8_lossy(&out.stderr));
        let images = stdout_json(&out)["result"]["images"].as_array().unwrap().clone();
        assert_eq!(images.len(), 300);
        if strategy != "pass-through" {
            assert!(images.iter().all(|i| i["selected"].as_u64().unwrap() <= 16));
        }
    }
}

#[test]
fn fit_then_augment_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_corpus(&ToyOptions {
        counts: vec![12, 18, 10, 14, 8],
        backgrounds: 6,
        ..Default::default()
    });
    corpus.write_to(dir.path()).unwrap();
    let ds = dir.path().join("annotations.json");
    let model = dir.path().join("model.json");
    let out = signkit(&["fit", "--dataset", p(&ds), "--out", p(&model), "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_json(&out)["result"]["with_geometry"].as_u64().unwrap() > 0);

    let augment = |threads: &str, dest: &Path| {
        signkit(&[
            "--threads",
            threads,
            "augment",
            "--dataset",
            p(&ds),
            "--backgrounds",
            p(&dir.path().join("background")),
            "--model",
            p(&model),
            "--target-min",
            "25",
            "--seed",
            "9",
            "--out",
            p(dest),
        ])
    };
    let aug = dir.path().join("aug");
    let out = augment("2", &aug);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    for (cat, n) in report["result"]["counts_after"].as_object().unwrap() {
        assert!(n.as_u64().unwrap() >= 25, "category {cat}: {n}");
    }
    let delta = load_dataset(aug.join("annotations.json")).unwrap().dataset;
    assert!(!delta.images.is_empty());
    for img in &delta.images {
        assert!(aug.join(&img.uri).is_file(), "{} missing", img.uri);
    }

    // thread count does not leak into the output
    let single = dir.path().join("aug1");
    assert_eq!(code(&augment("1", &single)), 0);
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&aug, "annotations.json"), read(&single, "annotations.json"));
    let first = &delta.images[0].uri;
    assert_eq!(read(&aug, first), read(&single, first));
}
