// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn vipseval(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vipseval"))
        .args(args)
        .current_dir(dir)
        .env_remove("VIPSEVAL_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SCENE: &str = r#"{
  "video_id": "clip0",
  "height": 6, "width": 10, "frames": 6, "seed": 3,
  "categories": [
    {"category_id": 1, "name": "road", "is_thing": false},
    {"category_id": 2, "name": "car", "is_thing": true}
  ],
  "bands": [{"category_id": 1, "height": 6}],
  "things": [{"track_id": 10, "category_id": 2, "height": 3, "width": 4,
              "positions": [[0,0],[0,1],[1,2],[1,3],[2,4],[2,5]]}],
  "perturbations": [{"kind": "id_switch", "frame": 3, "track": 10}]
}"#;

fn synth_scene(dir: &Path, spec: &str, gt: &str, pred: &str) {
    std::fs::write(dir.join("scene.json"), spec).unwrap();
    let o = vipseval(
        &["synth", "--spec", "scene.json", "--out-gt", gt, "--out-pred", pred],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

fn scene_dir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path(), SCENE, "gt", "pred");
    dir
}

#[test]
fn identity_evaluation_reports_one_hundred() {
    let dir = scene_dir();
    let o = vipseval(
        &["eval-vpq", "--gt", "gt/manifest.json", "--pred", "gt/manifest.json", "--windows", "1,2,4,6"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().last().unwrap().ends_with("100.0000"), "{out}");
    assert_eq!(out.matches("100.0000").count(), 5);
}

#[test]
fn id_switch_scores_and_json_report() {
    let dir = scene_dir();
    let o = vipseval(
        &["eval-vpq", "--gt", "gt/manifest.json", "--pred", "pred/manifest.json", "--out", "v.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    // car: one split clip of five at k=2 -> 4 / 5.5; road stays perfect
    assert!(out.contains("VPQ2   86.3636"), "{out}");
    assert!(out.contains("VPQ6   50.0000"), "{out}");

    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["tool"], "vipseval");
    assert_eq!(v["kind"], "vpq");
    assert_eq!(v["rules"]["ignore_void_predictions"], true);
    assert_eq!(v["config"]["windows"], serde_json::json!([1, 2, 4, 6]));
    let overall = v["result"]["overall_vpq"].as_f64().unwrap();
    assert!((overall - (1.0 + (1.0 + 4.0 / 5.5) / 2.0 + (1.0 + 1.5 / 4.5) / 2.0 + 0.5) / 4.0).abs() < 1e-12);
}

#[test]
fn stq_report_for_id_switch() {
    let dir = scene_dir();
    let o = vipseval(
        &["eval-stq", "--gt", "gt/manifest.json", "--pred", "pred/manifest.json", "--out", "s.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(v["result"]["sq"].as_f64(), Some(1.0));
    assert_eq!(v["result"]["aq"].as_f64(), Some(0.5));
    assert!((v["result"]["stq"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn table_row_from_literal_scores() {
    let dir = tempfile::tempdir().unwrap();
    let o = vipseval(
        &["report", "--entry", "yyyds:51.6104,50.5923,49.4210,48.5340:0.5171"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("| 1 | yyyds | 50.0394 (1) | 51.6104 (1) |"), "{out}");
    assert!(out.contains("0.5171 (1)"), "{out}");
}

#[test]
fn report_combines_vpq_and_stq_files_by_name() {
    let dir = scene_dir();
    for (cmd, file) in [("eval-vpq", "v.json"), ("eval-stq", "s.json")] {
        let o = vipseval(
            &[cmd, "--gt", "gt/manifest.json", "--pred", "pred/manifest.json", "--name", "ours", "--out", file],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = vipseval(&["report", "v.json", "s.json", "--out", "table.md"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("table.md")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("| 1 | ours |"));
    assert!(rows[0].ends_with("| 0.7071 (1) |"), "{}", rows[0]);
}

#[test]
fn mismatched_video_ids_exit_one_naming_the_video() {
    let dir = scene_dir();
    synth_scene(dir.path(), &SCENE.replace("clip0", "clip7"), "gt2", "pred2");
    let o = vipseval(
        &["eval-vpq", "--gt", "gt/manifest.json", "--pred", "pred2/manifest.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("clip0"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["eval-vpq", "--gt", "a"][..],
        &["no-such-command"][..],
        &["eval-stq", "--gt", "a", "--pred", "b", "--threads", "0"][..],
    ] {
        let o = vipseval(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vipseval(&["eval-stq", "--gt", "nope.json", "--pred", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = scene_dir();
    let mut results = Vec::new();
    for threads in ["1", "3"] {
        let file = format!("v{threads}.json");
        let o = vipseval(
            &[
                "eval-vpq", "--gt", "gt/manifest.json", "--pred", "pred/manifest.json",
                "--threads", threads, "--out", &file,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(&file)).unwrap()).unwrap();
        results.push(v["result"].clone());
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn validate_flags_broken_sidecar() {
    let dir = scene_dir();
    let o = vipseval(&["validate", "--input", "gt/manifest.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let sidecar: PathBuf = dir.path().join("gt/clip0/segments.json");
    std::fs::write(&sidecar, r#"{"segments": [{"id": 1, "category_id": 1}]}"#).unwrap();
    let o = vipseval(&["validate", "--input", "gt/manifest.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("unmapped id 10"), "{}", stdout(&o));
}

#[test]
fn convert_resize_and_reevaluate() {
    let dir = scene_dir();
    let o = vipseval(&["convert", "--input", "gt/manifest.json", "--mode", "semantic", "--out", "sem"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = vipseval(&["validate", "--input", "sem/manifest.json"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let o = vipseval(&["convert", "--input", "gt/manifest.json", "--mode", "instance", "--out", "inst"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let o = vipseval(&["resize", "--input", "gt/manifest.json", "--short-side", "12", "--out", "big"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = vipseval(
        &["eval-vpq", "--gt", "big/manifest.json", "--pred", "gt/manifest.json", "--short-side", "12"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("VPQ    100.0000"));
}

#[test]
fn invalid_scene_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scene.json"), SCENE.replace("\"track\": 10", "\"track\": 11")).unwrap();
    let o = vipseval(
        &["synth", "--spec", "scene.json", "--out-gt", "g", "--out-pred", "p"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown track 11"), "{}", stderr(&o));
}

#[test]
fn ema_over_weight_files() {
    use vipseval::io::{read_weights, write_weights, WeightMap};
    let dir = tempfile::tempdir().unwrap();
    for (name, v) in [("a.wgt", 0.0f32), ("b.wgt", 2.0)] {
        let mut wm = WeightMap::new();
        wm.insert("layer.w", vec![2], vec![v, -v]).unwrap();
        write_weights(&wm, &dir.path().join(name)).unwrap();
    }
    let o = vipseval(
        &["ema", "--snapshots", "a.wgt", "b.wgt", "--decay", "0.5", "--out", "avg.wgt"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let avg = read_weights(&dir.path().join("avg.wgt")).unwrap();
    assert_eq!(avg.get("layer.w").unwrap().data(), &[1.0, -1.0]);

    let mut other = WeightMap::new();
    other.insert("layer.b", vec![2], vec![0.0, 0.0]).unwrap();
    write_weights(&other, &dir.path().join("c.wgt")).unwrap();
    let o = vipseval(&["ema", "--snapshots", "a.wgt", "c.wgt", "--out", "x.wgt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("layer.w"), "{}", stderr(&o));
}

#[test]
fn decode_one_hot_features() {
    use vipseval::io::{write_categories, write_logits, write_weights, LogitVolume};
    use vipseval::querydecode::{FeatureVolume, QueryMatrix, QueryMeta, TargetKind};
    use vipseval::{Category, CategoryTable};
    let dir = tempfile::tempdir().unwrap();
    let cats = CategoryTable::new(vec![Category::stuff(1, "sky"), Category::thing(2, "car")]).unwrap();
    write_categories(&dir.path().join("cats.json"), &cats).unwrap();
    let q = QueryMatrix::new(
        2,
        vec![1.0, 0.0, 0.0, 1.0],
        vec![
            QueryMeta { kind: TargetKind::Instance, category_id: 2 },
            QueryMeta { kind: TargetKind::SemanticClass, category_id: 1 },
        ],
    )
    .unwrap();
    write_weights(&q.to_weights(), &dir.path().join("q.wgt")).unwrap();
    let f = FeatureVolume::new([1, 1, 3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0]).unwrap();
    let lv: LogitVolume = f.to_logits();
    write_logits(&lv, &dir.path().join("f.lgt")).unwrap();
    let o = vipseval(
        &[
            "decode", "--queries", "q.wgt", "--features", "f.lgt", "--categories", "cats.json",
            "--tau", "0.5", "--video-id", "v", "--out", "dec",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = vipseval::io::load_dataset(&dir.path().join("dec/manifest.json")).unwrap();
    // instance query 0 -> track 1; semantic query of category 1 -> 2 + 1
    assert_eq!(ds.sequences[0].frames()[0].ids(), &[1, 3, 0]);
}

#[test]
fn fuse_two_sources_with_instances() {
    use vipseval::fusion::{InstanceFile, InstanceMask};
    use vipseval::io::{write_categories, write_logits, LogitVolume};
    use vipseval::{Category, CategoryTable};
    let dir = tempfile::tempdir().unwrap();
    let cats = CategoryTable::new(vec![
        Category::stuff(1, "sky"),
        Category::stuff(2, "road"),
        Category::thing(3, "car"),
    ])
    .unwrap();
    write_categories(&dir.path().join("cats.json"), &cats).unwrap();
    // two pixels; the average favours sky on the first and road on the second
    let a = LogitVolume::new([1, 1, 2, 2], vec![1, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    let b = LogitVolume::new([1, 1, 2, 2], vec![1, 2], vec![2.0, -2.0, -2.0, 2.0]).unwrap();
    write_logits(&a, &dir.path().join("a.lgt")).unwrap();
    write_logits(&b, &dir.path().join("b.lgt")).unwrap();
    let inst = InstanceFile::from_masks("v", (1, 1, 2), &[]);
    inst.write(&dir.path().join("inst.json")).unwrap();
    let o = vipseval(
        &[
            "fuse", "--logits", "a.lgt", "b.lgt", "--instances", "inst.json", "--categories",
            "cats.json", "--out", "fused",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = vipseval::io::load_dataset(&dir.path().join("fused/manifest.json")).unwrap();
    assert_eq!(ds.sequences[0].frames()[0].ids(), &[1, 2]);

    let inst = InstanceFile::from_masks(
        "v",
        (1, 1, 2),
        &[InstanceMask { frame: 0, track_id: 5, category_id: 3, confidence: 0.9, mask: vec![false, true] }],
    );
    inst.write(&dir.path().join("inst.json")).unwrap();
    let o = vipseval(
        &[
            "fuse", "--logits", "a.lgt", "b.lgt", "--instances", "inst.json", "--categories",
            "cats.json", "--out", "fused2", "--weights", "1,1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = vipseval::io::load_dataset(&dir.path().join("fused2/manifest.json")).unwrap();
    assert_eq!(ds.sequences[0].frames()[0].ids(), &[6, 5]);

    let o = vipseval(
        &[
            "fuse", "--logits", "a.lgt", "b.lgt", "--instances", "inst.json", "--categories",
            "cats.json", "--out", "fused3", "--weights", "1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}
