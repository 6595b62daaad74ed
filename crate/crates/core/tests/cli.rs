use std::path::Path;
use std::process::{Command, Output};

fn ineqsurvey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ineqsurvey"))
        .args(args)
        .env_remove("INEQSURVEY_OUT_DIR")
        .output()
        .expect("run ineqsurvey")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    let out = ineqsurvey(&[
        "simulate",
        "--out",
        path(dir),
        "--seed",
        seed,
        "--population",
        "4000",
        "--sample",
        "700",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn estimate(dataset: &Path, out_dir: &Path, seed: &str) -> Output {
    ineqsurvey(&[
        "estimate",
        path(dataset),
        "--out",
        path(out_dir),
        "--iterations",
        "60",
        "--burn-in",
        "20",
        "--seed",
        seed,
        "--summaries",
        "gini,theil",
    ])
}

#[test]
fn simulate_estimate_validate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "2");
    let dataset = dir.path().join("dataset.jsonl");

    let out = ineqsurvey(&["ingest", path(&dataset)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sha256"));

    let out = estimate(&dataset, dir.path(), "4");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "report.json",
        "report.txt",
        "sweeps.jsonl",
        "running_means.tsv",
        "manifest.json",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }

    // A loose threshold so a 60-sweep run passes; the table itself is what is checked.
    let out = ineqsurvey(&["validate", path(dir.path()), "--min-coverage", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Gini") && table.contains("Theil"), "{table}");

    // Editing the dataset after the run is detected.
    let mut bytes = std::fs::read(&dataset).unwrap();
    bytes.extend_from_slice(b"\n");
    std::fs::write(&dataset, bytes).unwrap();
    let out = ineqsurvey(&["validate", path(dir.path())]);
    assert_eq!(out.status.code(), Some(6), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let data = tempfile::tempdir().unwrap();
    simulate(data.path(), "3");
    let dataset = data.path().join("dataset.jsonl");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(estimate(&dataset, a.path(), "11").status.success());
    assert!(estimate(&dataset, b.path(), "11").status.success());
    assert!(estimate(&dataset, c.path(), "12").status.success());
    for file in ["report.json", "sweeps.jsonl", "running_means.tsv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between identical runs");
    }
    let x = std::fs::read(a.path().join("sweeps.jsonl")).unwrap();
    let z = std::fs::read(c.path().join("sweeps.jsonl")).unwrap();
    assert_ne!(x, z);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ineqsurvey"))
        .args(["simulate", "--seed", "2", "--population", "4000", "--sample", "700"])
        .env("INEQSURVEY_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("dataset.jsonl").exists());
    assert!(dir.path().join("truth.json").exists());
}

#[test]
fn bad_input_maps_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let out = ineqsurvey(&["estimate"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"schema\":\"ineqsurvey.dataset\"}\n").unwrap();
    let out = ineqsurvey(&["ingest", path(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = ineqsurvey(&["ingest", path(&dir.path().join("missing.jsonl"))]);
    assert_eq!(out.status.code(), Some(5));

    // A record whose bounds cannot hold together with its reported total.
    simulate(dir.path(), "2");
    let dataset = dir.path().join("dataset.jsonl");
    let text = std::fs::read_to_string(&dataset).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut record: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    record["total"] = serde_json::json!([100, 200]);
    lines[1] = record.to_string();
    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, lines.join("\n") + "\n").unwrap();
    let out = ineqsurvey(&["ingest", path(&broken)]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(4), "{stderr}");
    assert!(stderr.contains("line 2"), "{stderr}");
}
