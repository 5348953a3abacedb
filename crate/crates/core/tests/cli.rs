use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn essh(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_essh"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn winding_single_point() {
    let dir = tempfile::tempdir().unwrap();
    for (j3p, j3, w) in [
        ("0.5", "0.8", "2"),
        ("0.2661", "0.5", "0"),
        ("2", "0.5", "-1"),
        ("0.5", "-0.76", "1"),
    ] {
        let (code, out, err) = essh(&["winding", "--j3p", j3p, "--j3", j3], dir.path());
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.trim(), w);
    }
}

#[test]
fn winding_grid_has_four_phases_and_gapless_nans() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = essh(&["winding", "--grid", "-2:2:0.1", "--out", "w"], dir.path());
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(dir.path().join("w/winding.csv")).unwrap();
    let mut lines = text.lines();
    let header: Value =
        serde_json::from_str(lines.next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(header["command"], "winding");
    assert_eq!(header["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(lines.next(), Some("j3p,j3,W"));
    let mut seen = std::collections::BTreeSet::new();
    let mut rows = 0;
    for l in lines {
        seen.insert(l.rsplit(',').next().unwrap().to_string());
        rows += 1;
    }
    assert_eq!(rows, 41 * 41);
    let expected: std::collections::BTreeSet<String> = ["-1", "0", "1", "2", "NaN"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(seen, expected);
}

#[test]
fn malformed_config_exits_two_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "params": {"j1": 1, "j1p": 1, "j3": 0.8, "j3p": 0.5, "jx": 2}}"#,
    )
    .unwrap();
    let (code, _, err) = essh(&["bands", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code, 2);
    let body: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(body["error"], "config");
    assert_eq!(body["key"], "params.jx");

    fs::write(
        &cfg,
        r#"{"schema_version": 1, "ensemble": {"model": {"kind": "ssh"}}}"#,
    )
    .unwrap();
    let (code, _, err) = essh(&["disorder", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code, 2);
    let body: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(body["key"], "ensemble.model.kind");
}

#[test]
fn module_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = essh(&["winding", "--j3p", "0", "--j3", "0"], dir.path());
    assert_eq!(code, 1);
    let body: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(body["error"], "module");
    assert_eq!(body["kind"], "GaplessModel");
}

#[test]
fn disorder_output_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.json");
    fs::write(
        &cfg,
        r#"{
  "schema_version": 1,
  "ensemble": {
    "model": {"kind": "extended_ssh", "params": {"j1": 1, "j1p": 1, "j3": 0.8, "j3p": 0.5}},
    "n_sites": 200,
    "emitter": {"delta": 0.0, "contacts": [{"site": 100, "g": 0.2}]},
    "disorder": "chiral_preserving",
    "sigmas": [0.05, 0.1],
    "samples": 12,
    "seed": 11
  }
}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    for (t, out) in [("1", "a"), ("4", "b")] {
        let (code, _, err) = essh(
            &["disorder", "--config", c, "--threads", t, "--out", out],
            dir.path(),
        );
        assert_eq!(code, 0, "{err}");
    }
    for f in ["samples.csv", "stats.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let (_, _, _) = essh(
        &["disorder", "--config", c, "--seed", "12", "--out", "c"],
        dir.path(),
    );
    let a = fs::read(dir.path().join("a/samples.csv")).unwrap();
    let c = fs::read(dir.path().join("c/samples.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn every_subcommand_runs_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = [
        (
            "selfenergy",
            r#"{"schema_version": 1, "n_k": 4096, "delta": {"min": -4, "max": 4, "step": 0.5}}"#,
        ),
        (
            "boundstate",
            r#"{"schema_version": 1, "n_k": 16384, "cells": [-5, 5]}"#,
        ),
        (
            "dynamics",
            r#"{"schema_version": 1, "mode": {"kind": "series", "n_sites": 40, "emitter": {"delta": 0, "contacts": [{"site": 0, "g": 0.1}, {"site": 1, "g": 0.1}]}, "t_max": 200, "dt": 0.5, "effective": true}}"#,
        ),
        ("floquet", r#"{"schema_version": 1}"#),
    ];
    for (cmd, body) in cfgs {
        let cfg = dir.path().join(format!("{cmd}.json"));
        fs::write(&cfg, body).unwrap();
        let (code, out, err) = essh(
            &[cmd, "--config", cfg.to_str().unwrap(), "--out", cmd],
            dir.path(),
        );
        assert_eq!(code, 0, "{cmd}: {err}");
        let listing: Value = serde_json::from_str(out.trim()).unwrap();
        assert!(!listing["written"].as_array().unwrap().is_empty());
    }
    let bs = fs::read_to_string(dir.path().join("boundstate/boundstate.csv")).unwrap();
    assert!(bs
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("j,residue_a,residue_b,quadrature_a,quadrature_b"));
    let doc: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("floquet/schedule.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["result"]["omegas"].as_array().unwrap().len(), 6);
}
