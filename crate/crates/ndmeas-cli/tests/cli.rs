//! End-to-end CLI tests: exit codes, file layout, digests, determinism, and
//! file-level agreement with the library oracles.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ndmeas")
}

fn model_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn ndmeas")
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

#[test]
fn validate_passes_on_shipped_model() {
    let out = run(&[
        "validate",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn validate_names_the_offending_fact() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model_path("qd2.json")).unwrap()).unwrap();
    doc["amplitudes"][0][0] = serde_json::json!([1.0, 0.0]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = run(&["validate", "--model", bad.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("fact 0"), "report should name the fact: {text}");
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_model_is_an_io_error() {
    let out = run(&["validate", "--model", "/nonexistent/nm.json", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_is_deterministic_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "simulate",
            "--model",
            model_path("qd2.json").to_str().unwrap(),
            "--seed",
            "42",
            "--k",
            "64",
            "--n-traj",
            "50",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{res:?}");
    }
    let bytes_a = std::fs::read(out_a.join("trajectories.tsv")).unwrap();
    let bytes_b = std::fs::read(out_b.join("trajectories.tsv")).unwrap();
    assert_eq!(bytes_a, bytes_b);

    // Every emitted file appears in the manifest with a matching digest.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
            .unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for entry in outputs {
        let name = entry["path"].as_str().unwrap();
        let bytes = std::fs::read(out_a.join(name)).unwrap();
        assert_eq!(entry["sha256"].as_str().unwrap(), sha256_hex(&bytes), "{name}");
    }
    // Different seed, different payload.
    let out_c = dir.path().join("c");
    let res = run(&[
        "simulate",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "43",
        "--k",
        "64",
        "--n-traj",
        "50",
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert_ne!(bytes_a, std::fs::read(out_c.join("trajectories.tsv")).unwrap());
}

#[test]
fn estimate_matches_library_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "estimate",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "7",
        "--k",
        "0",
        "--r",
        "12",
        "--method",
        "exact",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("estimate.json")).unwrap())
            .unwrap();
    // Library oracle: the same exact enumeration through the API.
    let model = ndmeas::channels::NonDemolitionModel::binary_example(0.3, 0.7);
    let dynamics = ndmeas::channels::StepDynamics::from_model(&model);
    let rho0 = ndmeas::linalg::DensityMatrix::from_pure(&[
        ndmeas::linalg::re(0.4f64.sqrt()),
        ndmeas::linalg::re(0.6f64.sqrt()),
    ])
    .unwrap();
    let oracle = ndmeas::inference::error_probability(
        &dynamics,
        &rho0,
        0,
        12,
        ndmeas::inference::ErrorMethod::Exact,
        0,
        0,
    )
    .unwrap();
    let total = report["total"].as_f64().unwrap();
    assert!((total - oracle.total).abs() < 1e-14, "{total} vs {}", oracle.total);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"seed": 5, "r": 4}"#).unwrap();
    let out = dir.path().join("out");
    // Flag says r = 12, config overrides to r = 4; seed comes from config.
    let res = run(&[
        "estimate",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--k",
        "0",
        "--r",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("estimate.json")).unwrap())
            .unwrap();
    assert_eq!(report["r"].as_u64(), Some(4));
}

#[test]
fn jumps_emits_cycle_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "jumps",
        "--model",
        model_path("qd2_cycle.json").to_str().unwrap(),
        "--seed",
        "9",
        "--n-cycles",
        "120",
        "--epsilon",
        "0.05",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let jumps = std::fs::read_to_string(dir.path().join("jumps.tsv")).unwrap();
    assert_eq!(jumps.lines().count(), 121);
    let closeness: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("closeness.json")).unwrap())
            .unwrap();
    assert!(closeness["fraction"].as_f64().unwrap() > 0.9);
    let markov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("markov.json")).unwrap())
            .unwrap();
    let emp = markov["comparison"]["empirical"][0][1].as_f64().unwrap();
    assert!((emp - 0.5).abs() < 0.2, "empirical flip rate {emp}");
}

#[test]
fn histories_and_bounds_and_purify_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let hist_out = dir.path().join("hist");
    let res = run(&[
        "histories",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "3",
        "--r",
        "6",
        "--p",
        "2",
        "--method",
        "exact",
        "--out",
        hist_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let hist: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(hist_out.join("histories.json")).unwrap())
            .unwrap();
    let assigned = hist["assigned_mass"].as_f64().unwrap();
    let uncovered = hist["uncovered"].as_f64().unwrap();
    assert!((assigned + uncovered - 1.0).abs() < 1e-12);

    let bounds_out = dir.path().join("bounds");
    let res = run(&[
        "bounds",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "3",
        "--k",
        "0",
        "--r",
        "10",
        "--n-traj",
        "2000",
        "--out",
        bounds_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let bounds: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bounds_out.join("bounds.json")).unwrap())
            .unwrap();
    assert_eq!(bounds["constants"]["d1"].as_f64(), Some(0.0));
    assert!(bounds["a"].as_f64().unwrap() < 1.0);

    let purify_out = dir.path().join("purify");
    let res = run(&[
        "purify",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "3",
        "--k",
        "120",
        "--n-traj",
        "200",
        "--h-grid=-0.5,-0.25,0,0.25,0.5",
        "--out",
        purify_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let clt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(purify_out.join("clt.json")).unwrap())
            .unwrap();
    let d2 = clt[0]["d2_at_zero"].as_f64().unwrap();
    assert!((d2 - 0.21).abs() < 0.1, "curvature {d2}");
    let purify: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(purify_out.join("purify.json")).unwrap())
            .unwrap();
    let f0 = purify["theta_freqs"][0].as_f64().unwrap();
    assert!((f0 - 0.4).abs() < 0.15, "theta freq {f0}");
    assert!(purify_out.join("offdiag.tsv").exists());
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    // Defaulted ε_r: the manifest must record the effective value.
    let res = run(&[
        "histories",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "17",
        "--r",
        "6",
        "--p",
        "2",
        "--method",
        "exact",
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
            .unwrap();
    let mut config = manifest["config"].clone();
    config.as_object_mut().unwrap().remove("out");
    let config_path = dir.path().join("replay.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out_b = dir.path().join("b");
    let res = run(&[
        "histories",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    assert_eq!(
        std::fs::read(out_a.join("histories.json")).unwrap(),
        std::fs::read(out_b.join("histories.json")).unwrap()
    );
}

#[test]
fn sweep_runs_subcommand_over_grid() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "sweep",
        "--command",
        "estimate",
        "--sweep",
        "r:4,8,12",
        "--model",
        model_path("qd2.json").to_str().unwrap(),
        "--seed",
        "11",
        "--k",
        "0",
        "--method",
        "exact",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{res:?}");
    let table = std::fs::read_to_string(dir.path().join("sweep.tsv")).unwrap();
    let eps: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(eps.len(), 3);
    assert!(eps[0] > eps[1] && eps[1] > eps[2], "{eps:?}");
    assert!(dir.path().join("r_4").join("estimate.json").exists());
}
