use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 9

[model]
num_blocks = 4
model_dim = 32
heads = 2
mlp_ratio = 2.0
injection_map = [0, 2]
chunk_frames = 8
frame_height = 4
frame_width = 4
latent_channels = 4

[bench]
warmup_chunks = 1
measured_chunks = 2
"#;

fn vace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vace")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn generate_from_synth_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let inputs = dir.path().join("in");
    let o = vace(&["synth", "--config", &cfg, "--mode", "composed", "--chunks", "2", "--refs", "1", "--out", inputs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));

    let sub = |s: &str| inputs.join(s).to_str().unwrap().to_string();
    let out = dir.path().join("out");
    let o = vace(&[
        "generate", "--config", &cfg, "--video", &sub("video"), "--mask", &sub("mask"), "--refs", &sub("refs"),
        "--arch", "adapted", "--alpha", "0.5", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("chunk_0000.tensor").exists() && out.join("chunk_0001.tensor").exists());
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["chunk_index"], i);
        assert_eq!(l["mode"], "COMPOSED");
        assert_eq!(l["architecture"], "adapted");
        assert_eq!(l["alpha"], 0.5);
        assert_eq!(l["dit_sequence_tokens"], 32);
        for key in ["cache_tokens", "hint_compute_count", "wall_latency_ms"] {
            assert!(l.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn bench_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let report = dir.path().join("report.json");
    let o = vace(&["bench", "--config", &cfg, "--scenarios", "baseline,inpaint", "--report", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("inpaint"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["scenarios"].as_array().unwrap().len(), 2);
    assert_eq!(r["scenarios"][0]["overhead_ratio"], 1.0);
    let trace = fs::read_to_string(dir.path().join("report.trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 2 * 3);
}

#[test]
fn verify_exit_codes() {
    let o = vace(&["verify", "--suite", "mode-table"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("0 failed"));
    let o = vace(&["verify", "--suite", "zero-init", "--fault", "nonzero-projection-init"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("[FAIL]"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let o = vace(&["bench", "--scenarios", "warp", "--report", "/dev/null"]);
    assert!(!o.status.success());
    assert!(text(&o).contains("warp"));
    let o = vace(&["generate", "--video", "/nonexistent", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = vace(&["verify", "--suite", "everything"]);
    assert!(!o.status.success());
}
