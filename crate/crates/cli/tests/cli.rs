use std::path::Path;
use std::process::{Command, Output};

fn council(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_council"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr carries one error object")
}

fn synth(dir: &Path, name: &str, n: &str, prefix: &str, seed: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let out = council(
        &["data", "synth", "--out", p(&path), "--n", n, "--dialogues", "20", "--seed", seed, "--prefix", prefix],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn classify_is_reproducible_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train.jsonl", "300", "dlg", "1");
    let test = synth(dir.path(), "test.jsonl", "40", "q", "2");
    let runs: Vec<Vec<u8>> = ["a.jsonl", "b.jsonl"]
        .iter()
        .map(|name| {
            let out_path = dir.path().join(name);
            let out = council(
                &["classify", "--corpus", p(&train), "--input", p(&test), "--out", p(&out_path), "--seed", "3"],
                &[],
            );
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            std::fs::read(&out_path).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(String::from_utf8_lossy(&runs[0]).lines().count(), 40);

    let eval = council(
        &["evaluate", "--pred", p(&dir.path().join("a.jsonl")), "--gold", p(&test), "--json"],
        &[],
    );
    assert!(eval.status.success());
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let acc = report["accuracy"].as_f64().expect("accuracy field");
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn env_override_changes_the_run_seed() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train.jsonl", "300", "dlg", "1");
    let test = synth(dir.path(), "test.jsonl", "40", "q", "2");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[data]\ncorpus = \"train.jsonl\"\n").unwrap();
    let run = |name: &str, envs: &[(&str, &str)]| {
        let out_path = dir.path().join(name);
        let out = council(&["classify", "--config", p(&cfg), "--input", p(&test), "--out", p(&out_path)], envs);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(out_path).unwrap()
    };
    let from_file = run("file.jsonl", &[]);
    let explicit = council(
        &["classify", "--corpus", p(&train), "--input", p(&test), "--out", p(&dir.path().join("flag.jsonl")), "--seed", "3"],
        &[],
    );
    assert!(explicit.status.success());
    assert_eq!(from_file, std::fs::read_to_string(dir.path().join("flag.jsonl")).unwrap());
    let overridden = run("env.jsonl", &[("COUNCIL_SEED", "4")]);
    assert_ne!(from_file, overridden);
}

#[test]
fn missing_corpus_reports_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let test = synth(dir.path(), "test.jsonl", "20", "q", "2");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[data]\ncorpus = \"absent.jsonl\"\n").unwrap();
    let out = council(
        &["classify", "--config", p(&cfg), "--input", p(&test), "--out", p(&dir.path().join("o.jsonl"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("absent.jsonl"));
}

#[test]
fn bad_env_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let test = synth(dir.path(), "test.jsonl", "20", "q", "2");
    let out = council(
        &["classify", "--corpus", p(&test), "--input", p(&test), "--out", p(&dir.path().join("o.jsonl"))],
        &[("COUNCIL_COUNCIL__TAU", "7.5")],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "config");
}

#[test]
fn missing_input_file_gives_json_error() {
    let out = council(&["data", "stats", "--input", "/nonexistent/x.jsonl"], &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert!(err["error"].is_string());
    assert!(err["message"].as_str().unwrap().contains("/nonexistent/x.jsonl"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(council(&["evaluate", "--bogus"], &[]).status.code(), Some(2));
    assert_eq!(council(&["stability", "--predictions", "one.jsonl", "--gold", "g"], &[]).status.code(), Some(2));
}

#[test]
fn scripted_mock_without_answers_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "train.jsonl", "300", "dlg", "1");
    let test = synth(dir.path(), "test.jsonl", "5", "q", "2");
    let script = dir.path().join("script.json");
    std::fs::write(&script, "{}").unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[data]\ncorpus = \"train.jsonl\"\n[backend]\nprofile = \"scripted\"\nscript = \"script.json\"\n",
    )
    .unwrap();
    let out_path = dir.path().join("preds.jsonl");
    let out = council(&["classify", "--config", p(&cfg), "--input", p(&test), "--out", p(&out_path)], &[]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let failures = std::fs::read_to_string(dir.path().join("preds.jsonl.failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 5);
}

#[test]
fn guard_rejection_removes_stale_output() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    assert!(council(&["data", "fixture", "--out-dir", p(&fx), "--seed", "0"], &[]).status.success());
    let proposals = dir.path().join("proposals.jsonl");
    let build = council(
        &["override", "build", "--evidence-dir", p(&fx), "--base", p(&fx.join("base.jsonl")), "--out", p(&proposals)],
        &[],
    );
    assert!(build.status.success());
    // Unverified proposals never pass the guard.
    let out = dir.path().join("accepted.jsonl");
    std::fs::write(&out, "stale\n").unwrap();
    let guard = council(
        &["override", "guard", "--base", p(&fx.join("base.jsonl")), "--proposals", p(&proposals), "--out", p(&out)],
        &[],
    );
    assert_eq!(guard.status.code(), Some(3));
    assert_eq!(error_json(&guard)["error"], "guard_rejected");
    assert!(!out.exists());
}
