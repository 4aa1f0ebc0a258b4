use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// Mock run flags for the small corpus built by [`staged`].
const BASE: [&str; 5] = ["--config", "data/madrec.toml", "--mock", "--pool-size", "50"];

fn with_base<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = BASE.to_vec();
    v.extend_from_slice(extra);
    v
}

fn madrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_madrec"))
        .current_dir(dir)
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = madrec(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A small synthetic corpus taken through profile building.
fn staged() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "data", "--users", "80", "--items", "120"]);
    for stage in ["ingest", "extract-aspects", "build-profiles"] {
        ok(dir.path(), &["--config", "data/madrec.toml", "--mock", stage]);
    }
    dir
}

#[test]
fn recommend_is_repeatable() {
    let dir = staged();
    let args = with_base(&["recommend", "--user", "U0003", "--task", "direct"]);
    let first = ok(dir.path(), &args);
    let second = ok(dir.path(), &args);
    assert_eq!(first, second);
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["result"]["ranked_items"].as_array().unwrap().len(), 10);

    let explained = ok(dir.path(), &with_base(&["explain", "--user", "U0003"]));
    let v: serde_json::Value = serde_json::from_str(&explained).unwrap();
    assert_eq!(v["result"]["explanations"].as_object().unwrap().len(), 10);
}

#[test]
fn ablate_writes_every_cell() {
    let dir = staged();
    let table = ok(dir.path(), &with_base(&["ablate"]));
    for name in ["RR+SF", "RR+No-SF", "No-RR+SF", "No-RR+No-SF"] {
        assert_eq!(table.lines().filter(|l| l.starts_with(&format!("{name} "))).count(), 2, "{table}");
    }
    let reports = fs::read_dir(dir.path().join("data/out/reports")).unwrap();
    let json = reports
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".json"))
        .count();
    assert_eq!(json, 8);
}

#[test]
fn zero_rounds_matches_no_feedback() {
    let dir = staged();
    let report = |extra: &[&str]| {
        let mut args = with_base(extra);
        args.push("evaluate");
        ok(dir.path(), &args);
        let name = if extra.contains(&"--no-sf") { "direct_RR_No-SF" } else { "direct_RR_SF" };
        let text = fs::read_to_string(dir.path().join(format!("data/out/reports/{name}.rows.jsonl"))).unwrap();
        // rows carry the config name; compare everything else
        text.lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("config");
                v.to_string()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(report(&["--max-rounds", "0"]), report(&["--no-sf"]));
}

#[test]
fn missing_upstream_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "data"]);
    let out = madrec(dir.path(), &["--config", "data/madrec.toml", "--mock", "build-profiles"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run `ingest` first"), "{err}");
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "data"]);
    let plan = ok(dir.path(), &["--config", "data/madrec.toml", "--mock", "--dry-run", "ingest"]);
    assert!(plan.contains("stage: ingest"), "{plan}");
    assert!(plan.contains("[eval]"), "{plan}");
    assert!(!dir.path().join("data/out").exists());
}

#[test]
fn weights_must_sum_to_one_unless_normalized() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "data"]);
    let args = ["--config", "data/madrec.toml", "--alpha", "0.5", "--beta", "0.5", "--gamma", "0.5", "--dry-run", "evaluate"];
    let out = madrec(dir.path(), &args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--normalize-weights"));
    let mut normalized = args.to_vec();
    normalized.insert(0, "--normalize-weights");
    let plan = ok(dir.path(), &normalized);
    assert!(plan.contains("alpha = 0.3333333333333333"), "{plan}");
}

#[test]
fn live_mode_needs_the_key_variable() {
    let dir = staged();
    let out = madrec(dir.path(), &["--config", "data/madrec.toml", "evaluate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("OPENAI_API_KEY"), "{err}");
}
