use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gaitwave::runner::{ResultsFile, RESULTS_FILE};
use serde_json::{json, Value};

fn gaitwave(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gaitwave"));
    c.args(args).env("RUST_LOG", "warn").env_remove("GAITWAVE_OUT");
    if let Some(p) = out_env {
        c.env("GAITWAVE_OUT", p);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn spec(k: usize, ranges: Value) -> Value {
    json!({
        "num_classes": k, "sessions_per_class": 1, "duration_s": 30.0, "rate_hz": 10.0,
        "channels": 30, "band": "mmwave", "gait_freq_range": ranges, "harmonic_count": 2,
        "noise_std": 0.1, "background_level": [5.0], "seed": 3
    })
}

fn tiny_config(dir: &Path, lr: f64) -> std::path::PathBuf {
    let cfg = json!({
        "dataset": {"synth": [spec(3, json!([[0.8, 0.82], [1.1, 1.12], [1.4, 1.42]]))]},
        "bands": [{"kind": "mmwave_10hz", "background_subtraction": true},
                  {"kind": "mmwave_10hz", "background_subtraction": false},
                  {"kind": "sub6_10hz", "background_subtraction": false}],
        "models": [{"family": "tcn", "channels": [4, 8], "kernel_size": 2},
                   {"family": "lstm_humanfi", "hidden_dim": 4}],
        "train": {"epochs": 2, "batch_size": 4, "learning_rate": lr, "repeats": 2},
        "output_dir": dir.join("out")
    });
    let p = dir.join("exp.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn job_hashes(out: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(out.join("jobs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn synth_command_contract() {
    let d = tempfile::tempdir().unwrap();
    let sp = d.path().join("spec.json");
    let five = json!([[0.8, 0.82], [1.0, 1.02], [1.2, 1.22], [1.4, 1.42], [1.6, 1.62]]);
    fs::write(&sp, spec(5, five).to_string()).unwrap();
    let out = d.path().join("data");
    let o = gaitwave(&["synth", sp.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("windows per class [6, 6, 6, 6, 6]"));
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let entries = m["entries"].as_array().unwrap();
    let mut labels: Vec<u64> = entries.iter().filter_map(|e| e["person_label"].as_u64()).collect();
    labels.sort();
    assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    assert_eq!(entries.iter().filter(|e| e["is_background"] == true).count(), 1);

    let o = gaitwave(&["synth", sp.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 3);
    let o = gaitwave(&["synth", sp.to_str().unwrap(), "--out", out.to_str().unwrap(), "--force"], None);
    assert_eq!(code(&o), 0);

    let same = json!([[0.8, 0.9], [0.8, 0.9]]);
    fs::write(&sp, spec(2, same).to_string()).unwrap();
    let o = gaitwave(&["synth", sp.to_str().unwrap(), "--out", d.path().join("x").to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn missing_manifest_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("c.json");
    let cfg = json!({
        "dataset": {"manifest": "absent/manifest.json"},
        "bands": [{"kind": "mmwave_10hz"}],
        "models": [{"family": "tcn", "channels": [4], "kernel_size": 2}]
    });
    fs::write(&p, cfg.to_string()).unwrap();
    let o = gaitwave(&["run", p.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest"));
}

#[test]
fn run_resume_and_report() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path(), 3e-3);
    let out = d.path().join("out");
    let o = gaitwave(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("| TemporalConvNet |"), "{stdout}");
    let results = fs::read(out.join(RESULTS_FILE)).unwrap();
    let r: ResultsFile = serde_json::from_slice(&results).unwrap();
    assert!(r.complete);
    // Two models over two background flags; the sub6 band has no data.
    assert_eq!(r.rows.len(), 4);
    assert!(r.rows.iter().all(|row| row.sub6_10hz.is_none() && row.mmwave_10hz.is_some()));
    assert!(!r.bands[2].present);
    assert_eq!(r.jobs.len(), 2 * 2 * 2);
    for f in ["comparison.csv", "comparison.md", "summary.json", "summary.md"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let hashes = job_hashes(&out);
    assert_eq!(hashes.len(), 8);

    // Existing results are not overwritten silently.
    assert_eq!(code(&gaitwave(&["run", cfg.to_str().unwrap()], None)), 3);

    // Resume after losing two jobs retrains only those.
    fs::remove_file(out.join("jobs").join(&hashes[0])).unwrap();
    fs::remove_file(out.join("jobs").join(&hashes[5])).unwrap();
    let o = gaitwave(&["run", cfg.to_str().unwrap(), "--resume"], None);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 jobs run, 6 reused"));
    assert_eq!(job_hashes(&out), hashes);
    assert_eq!(fs::read(out.join(RESULTS_FILE)).unwrap(), results);

    // Two workers give the same bytes as one.
    let o = gaitwave(&["run", cfg.to_str().unwrap(), "--force", "--jobs", "2"], None);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(out.join(RESULTS_FILE)).unwrap(), results);

    // Report regenerates identical tables and never touches results.json.
    let md = fs::read(out.join("comparison.md")).unwrap();
    let summary = fs::read(out.join("summary.json")).unwrap();
    fs::remove_file(out.join("comparison.md")).unwrap();
    let o = gaitwave(&["report", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(out.join("comparison.md")).unwrap(), md);
    assert_eq!(fs::read(out.join("summary.json")).unwrap(), summary);
    assert_eq!(fs::read(out.join(RESULTS_FILE)).unwrap(), results);

    let o = gaitwave(&["report", out.to_str().unwrap(), "--exclude-lstm"], None);
    assert_eq!(code(&o), 0);
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join("summary_excl_all_lstm.json")).unwrap()).unwrap();
    assert_eq!(s[0]["total"], 2);
    assert_eq!(s[0]["scope"], "excl_all_lstm");
    let o = gaitwave(&["report", out.to_str().unwrap(), "--exclude-lstm-humanfi"], None);
    assert_eq!(code(&o), 0);
    assert!(out.join("summary_excl_lstm_humanfi.md").is_file());

    // GAITWAVE_OUT redirects the output directory.
    let alt = d.path().join("alt");
    let o = gaitwave(&["run", cfg.to_str().unwrap(), "--seed", "4"], Some(&alt));
    assert_eq!(code(&o), 0);
    let r4: ResultsFile = serde_json::from_slice(&fs::read(alt.join(RESULTS_FILE)).unwrap()).unwrap();
    assert!(r4.jobs.iter().all(|j| j.seed >= 4));
}

#[test]
fn report_rejects_empty_and_malformed() {
    let d = tempfile::tempdir().unwrap();
    let o = gaitwave(&["report", d.path().to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    fs::write(d.path().join(RESULTS_FILE), "{\"version\": 1, \"rows\": [").unwrap();
    let o = gaitwave(&["report", d.path().to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(RESULTS_FILE));
}

#[test]
fn training_failure_exits_1_with_partial_results() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path(), 1e300);
    let o = gaitwave(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let r: ResultsFile = serde_json::from_slice(&fs::read(d.path().join("out").join(RESULTS_FILE)).unwrap()).unwrap();
    assert!(!r.complete);
    assert!(r.jobs.iter().any(|j| j.error.is_some()));
}
