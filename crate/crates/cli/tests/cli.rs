use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn motionforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = motionforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) -> PathBuf {
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

fn synth(dir: &Path, config: Option<&Path>, seed: &str) -> PathBuf {
    let mut args = vec!["synth", "--seed", seed, "--out", p(dir)];
    if let Some(c) = config {
        args.extend(["--config", p(c)]);
    }
    PathBuf::from(ok(&args).trim())
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn compose_defaults_to_24_frames_at_704x448() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(
        &tmp.path().join("cfg.json"),
        r#"{"synth": {"width": 704, "height": 448, "frame_count": 4}}"#,
    );
    let scene = synth(&tmp.path().join("scene"), Some(&config), "3");
    let script = write(&tmp.path().join("script.json"), "{}");
    let out = tmp.path().join("t.ctrl");
    ok(&["compose", "--scene", p(&scene), "--script", p(&script), "--out", p(&out)]);

    let bytes = fs::read(&out).unwrap();
    assert_eq!(&bytes[..4], b"CTRL");
    let dims: Vec<u32> = (0..4)
        .map(|k| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()))
        .collect();
    assert_eq!(dims, [24, 5, 448, 704]);
    let sidecar = json(&tmp.path().join("t.ctrl.json"));
    assert_eq!(sidecar["shape"], serde_json::json!([24, 5, 448, 704]));

    ok(&["compose", "--scene", p(&scene), "--script", p(&script), "--out", p(&out), "--frames", "6"]);
    assert_eq!(motionforge::tensor::read_tensor(&out).unwrap().shape(), [6, 5, 448, 704]);
}

#[test]
fn compose_then_preview_frame_zero_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(&tmp.path().join("scene"), None, "1");
    let mut manifest = json(&scene);
    manifest["units"] = serde_json::json!([
        {"mask": "segment_000.png", "category": "drag"},
        {"mask": "segment_001.png", "category": "brush"},
    ]);
    fs::write(&scene, manifest.to_string()).unwrap();
    let script = write(
        &tmp.path().join("script.json"),
        r#"{"frame_count": 6,
            "camera": [{"frame": 5, "pose": {"translation": [0.05, 0, 0]}}],
            "units": {"1": {"rigid": [{"frame": 5, "pose": {"translation": [0, 0.1, 0]}}]},
                      "2": {"strength": 0.2}}}"#,
    );
    let tensor = tmp.path().join("t.ctrl");
    let out = tmp.path().join("preview");
    ok(&["compose", "--scene", p(&scene), "--script", p(&script), "--out", p(&tensor)]);
    ok(&["preview", "--tensor", p(&tensor), "--frame", "0", "--to", "5", "--out", p(&out)]);

    let frame: motionforge::preview::PreviewFrame =
        serde_json::from_value(json(&out.join("frame_0000.json"))).unwrap();
    assert_eq!(frame.points.len(), frame.width * frame.height);
    for (k, pt) in frame.points.iter().enumerate() {
        let (u, v) = ((k % frame.width) as f32, (k / frame.width) as f32);
        assert!((pt.u - u).abs() < 1e-6 && (pt.v - v).abs() < 1e-6, "point {k}: {pt:?}");
    }
    assert_eq!(frame.units.len(), 3);
    let last: motionforge::preview::PreviewFrame =
        serde_json::from_value(json(&out.join("frame_0005.json"))).unwrap();
    assert_ne!(last.points, frame.points);
    assert!(out.join("frame_0005.png").exists());

    let incomplete = write(&tmp.path().join("incomplete.json"), r#"{"frame_count": 6}"#);
    let status = motionforge(&["compose", "--scene", p(&scene), "--script", p(&incomplete), "--out", p(&tensor)]);
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("missing curves for units [1, 2]"));
}

#[test]
fn metrics_self_comparison_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(&tmp.path().join("scene"), None, "2");
    let tracks = scene.parent().unwrap().join("camera.trck");
    let report = tmp.path().join("report.json");
    let csv = tmp.path().join("frames.csv");
    ok(&[
        "metrics", "--gen", p(&tracks), "--ref", p(&tracks), "--scene", p(&scene), "--out", p(&report), "--csv",
        p(&csv),
    ]);
    let report = json(&report);
    assert_eq!(report["objmc"], 0.0);
    assert!(report["conventions"].as_str().unwrap().len() > 10);
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 1 + 24);

    let (w, h) = (64, 48);
    let stdout = ok(&[
        "metrics", "--gen", p(&tracks), "--ref", p(&tracks), "--width", &w.to_string(), "--height", &h.to_string(),
    ]);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["objmc"], 0.0);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|path| (path.file_name().unwrap().to_string_lossy().to_string(), fs::read(&path).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, None, "7");
    synth(&b, None, "7");
    synth(&c, None, "8");
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    assert!(ta.len() >= 5);
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn pipeline_writes_tensor_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(&tmp.path().join("scene"), None, "4");
    let out = tmp.path().join("out");
    ok(&["pipeline", "--scene", p(&scene), "--out", p(&out), "--seed", "11"]);
    let first = fs::read(out.join("sample.ctrl")).unwrap();
    let provenance = json(&out.join("sample.provenance.json"));
    assert_eq!(provenance["seed"], 11);
    assert!(out.join("sample.ctrl.json").exists());

    ok(&["pipeline", "--scene", p(&scene), "--out", p(&out), "--seed", "11"]);
    assert_eq!(fs::read(out.join("sample.ctrl")).unwrap(), first);

    let batch = write(
        &tmp.path().join("batch.json"),
        &format!(r#"{{"scenes": ["{}"], "output_dir": "batch_out", "seed": 11}}"#, p(&scene)),
    );
    ok(&["pipeline", "--batch", p(&batch)]);
    assert_eq!(fs::read(tmp.path().join("batch_out/sample_0000.ctrl")).unwrap(), first);
}

#[test]
fn exit_codes() {
    let out = motionforge(&["compose", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = motionforge(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = motionforge(&["compose", "--scene", p(&missing), "--script", p(&missing), "--out", "x.ctrl"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = write(&tmp.path().join("bad.json"), "{\"depth\": 3}");
    let out = motionforge(&["compose", "--scene", p(&bad), "--script", p(&bad), "--out", "x.ctrl"]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = write(&tmp.path().join("cfg.json"), r#"{"sede": 1}"#);
    let out = motionforge(&["synth", "--out", p(tmp.path()), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}
