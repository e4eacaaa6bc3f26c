use std::path::Path;
use std::process::Command;

use serde_json::Value;

use scoreseg_cli::manifest::DEFAULT_MANIFEST;

fn tiny_manifest(dir: &Path) -> Value {
    let mut m: Value = serde_json::from_str(DEFAULT_MANIFEST).unwrap();
    m["output_dir"] = "out".into();
    m["synth"]["n_train"] = 3.into();
    m["synth"]["n_test"] = 2.into();
    m["synth"]["n_cinematic_train"] = 1.into();
    m["synth"]["n_cinematic_test"] = 1.into();
    m["synth"]["cinematic_duration_s"] = 3.0.into();
    m["model"]["n_iter"] = 2.into();
    std::fs::write(dir.join("m.json"), m.to_string()).unwrap();
    m
}

fn scoreseg(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scoreseg"))
        .current_dir(dir)
        .args(args)
        .args(["--manifest", "m.json", "--jobs", "1"])
        .output()
        .unwrap()
}

fn error_record(out: &std::process::Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn invalid_manifest_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = tiny_manifest(dir.path());
    m["schema"] = "nope".into();
    m["synth"]["timbre_distance"] = 3.0.into();
    m["separator"]["n_bases"] = 0.into();
    std::fs::write(dir.path().join("m.json"), m.to_string()).unwrap();
    let out = scoreseg(dir.path(), &["synth"]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "manifest");
    assert_eq!(rec["error"]["problems"].as_array().unwrap().len(), 3, "{rec}");
}

#[test]
fn missing_stage_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    tiny_manifest(dir.path());
    let out = scoreseg(dir.path(), &["align"]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "runtime");
    assert!(rec["error"]["message"].as_str().unwrap().contains("train-hmm"));
}

#[test]
fn staged_commands_are_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let reports = ["hmm_training.json", "alignment.json", "table1.csv", "recognition.json", "table2.csv"];
    let mut seen = Vec::new();
    for d in &dirs {
        tiny_manifest(d.path());
        for cmd in ["synth", "train-hmm", "align", "recognize", "segment"] {
            let out = scoreseg(d.path(), &[cmd]);
            assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
        let r = d.path().join("out/reports");
        let mut bytes: Vec<Vec<u8>> = reports.iter().map(|f| std::fs::read(r.join(f)).unwrap()).collect();
        bytes.push(std::fs::read(d.path().join("out/inventory.json")).unwrap());
        seen.push(bytes);
    }
    assert_eq!(seen[0], seen[1]);

    // A score lacking a mapped track fails before any decoding.
    let d = dirs[0].path();
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    m["instrument_map"]["strings"] = "piano".into();
    std::fs::write(d.join("m.json"), m.to_string()).unwrap();
    let out = scoreseg(d, &["align"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = error_record(&out)["error"].to_string();
    assert!(msg.contains("strings"), "{msg}");
}

#[test]
fn seed_flag_changes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    tiny_manifest(dir.path());
    let a = scoreseg(dir.path(), &["synth", "--out", "a"]);
    let b = scoreseg(dir.path(), &["synth", "--out", "b", "--seed", "5"]);
    assert!(a.status.success() && b.status.success());
    let read = |p: &str| std::fs::read(dir.path().join(p).join("corpus/music/manifest.jsonl")).unwrap();
    assert_ne!(read("a"), read("b"));
}
