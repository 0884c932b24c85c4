use std::path::Path;
use std::process::{Command, Output};

fn aupref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aupref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth_inputs(dir: &Path) -> Vec<String> {
    let out = aupref(&[
        "synth",
        "--seed",
        "7",
        "--participants",
        "3",
        "--sessions",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let paths: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    vec![
        "--traces".into(),
        paths["traces"].as_str().unwrap().into(),
        "--annotations".into(),
        paths["annotations"].as_str().unwrap().into(),
        "--scores".into(),
        paths["scores"].as_str().unwrap().into(),
    ]
}

#[test]
fn synth_ingest_fit_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = synth_inputs(&tmp.path().join("in"));
    let input_refs: Vec<&str> = inputs.iter().map(String::as_str).collect();

    let mut args = vec!["ingest"];
    args.extend(&input_refs);
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&aupref(&args))).unwrap();
    assert_eq!(summary["participants"], 3);
    assert_eq!(summary["sessions"], 9);

    let mut args = vec!["evaluate", "--protocol", "valence_only"];
    args.extend(&input_refs);
    let fit: serde_json::Value = serde_json::from_str(&stdout_of(&aupref(&args))).unwrap();
    assert_eq!(fit["folds"].as_array().unwrap().len(), 3);
    assert!(fit["pooled"]["accuracy"].as_f64().unwrap() >= 0.0);

    let out_dir = tmp.path().join("bundle");
    let mut args = vec!["report", "--output-dir", out_dir.to_str().unwrap()];
    args.extend(&input_refs);
    let manifest: serde_json::Value = serde_json::from_str(&stdout_of(&aupref(&args))).unwrap();
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 3);
    assert!(out_dir.join("fit.json").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn filter_and_score_emit_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = synth_inputs(&tmp.path().join("in"));
    let input_refs: Vec<&str> = inputs.iter().map(String::as_str).collect();

    let mut args = vec!["filter"];
    args.extend(&input_refs);
    let csv = stdout_of(&aupref(&args));
    assert!(csv.starts_with("participant_id,session_id,image_id,clip_kind"));
    // 3 participants x 3 sessions x 5 images x 2 clips = 90 rows + header.
    assert_eq!(csv.lines().count(), 91);

    let mut args = vec!["score", "--k", "0.4"];
    args.extend(&input_refs);
    let csv = stdout_of(&aupref(&args));
    assert!(csv.starts_with("image_id,alpha4,valence"));
}

#[test]
fn exit_codes_follow_error_taxonomy() {
    // Validation error: impossible threshold.
    let out = aupref(&["ingest", "--fdcs-min", "1.5"]);
    assert_eq!(out.status.code(), Some(2));

    // Validation error: ingest without inputs.
    let out = aupref(&["ingest"]);
    assert_eq!(out.status.code(), Some(2));

    // Data error: inputs that do not parse.
    let tmp = tempfile::tempdir().unwrap();
    for name in ["t.csv", "a.json", "s.csv"] {
        std::fs::write(tmp.path().join(name), b"garbage").unwrap();
    }
    let out = aupref(&[
        "ingest",
        "--traces",
        tmp.path().join("t.csv").to_str().unwrap(),
        "--annotations",
        tmp.path().join("a.json").to_str().unwrap(),
        "--scores",
        tmp.path().join("s.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn losscheck_reports_pass() {
    let out = aupref(&["losscheck", "--batches", "20"]);
    let text = stdout_of(&out);
    assert!(text.contains("PASS weight normalization identities"), "{text}");
    assert!(text.contains("PASS analytic gradients match central differences"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = synth_inputs(&tmp.path().join("in"));

    // Config carries the input paths; a flag overrides the policy.
    let config = serde_json::json!({
        "inputs": {
            "traces": inputs[1],
            "annotations": inputs[3],
            "scores": inputs[5],
        },
        "penalty": 2,
    });
    let config_path = tmp.path().join("run.json");
    std::fs::write(&config_path, serde_json::to_vec(&config).unwrap()).unwrap();

    let out = aupref(&[
        "ingest",
        "--config",
        config_path.to_str().unwrap(),
        "--exclusion-policy",
        "reaction_only",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(summary["participants"], 3);

    // A bad override still fails validation even with a good config file.
    let out = aupref(&[
        "ingest",
        "--config",
        config_path.to_str().unwrap(),
        "--clip-exclusion-fraction",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
