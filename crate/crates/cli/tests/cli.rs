//! End-to-end tests of the binary and the file formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use recovery_cli::config::{validate_config, RunConfig};
use recovery_cli::formats::{load_community, load_realization, save_community};
use recovery_core::community::{generate_testbed, TestbedConfig};
use recovery_core::rng::Stream;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recovery-sim"))
}

fn write_small_config(dir: &Path, out_name: &str, extra_solver: &str) -> PathBuf {
    let catalog = dir.join("catalog.json");
    fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default_catalog.json"),
        &catalog,
    )
    .unwrap();
    let config = format!(
        r#"{{
  "master_seed": 11,
  "replications": 2,
  "outputs": "{}",
  "policy": "both",
  "checkpoint_days": [0, 50],
  "community": {{
    "generate": {{
      "grid_rows": 2, "grid_cols": 2, "n_buildings": 60,
      "total_population": 200, "occupancy_rate": 0.9
    }}
  }},
  "scenario": {{"magnitude": 6.9, "epicenter": [-12.0, 0.0]}},
  "catalog": "catalog.json",
  "solver": {{"n_mc_min": 4, "n_mc_max": 16{extra_solver}}}
}}"#,
        dir.join(out_name).display()
    );
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    path
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_produces_all_outputs_with_stable_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_small_config(tmp.path(), "out", "");
    let status = bin().arg("run").arg(&config).status().unwrap();
    assert!(status.success());
    let out = tmp.path().join("out");
    for name in [
        "recovery_curve.csv",
        "grid_timeline.csv",
        "summary.json",
        "realization.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let curve = fs::read_to_string(out.join("recovery_curve.csv")).unwrap();
    assert!(curve.starts_with(
        "kind,policy,replication,epoch,elapsed_days,housed_total,housed_children,housed_adults,housed_seniors\n"
    ));
    assert!(curve.contains("\ncheckpoint,"));
    let grid = fs::read_to_string(out.join("grid_timeline.csv")).unwrap();
    assert!(grid.starts_with(
        "policy,replication,epoch,elapsed_days,cell_id,housed,damaged_remaining,free_rus\n"
    ));
    // Realization covers both replications with full per-building arrays.
    let realization = load_realization(&out.join("realization.json")).unwrap();
    assert_eq!(realization.replications.len(), 2);
    assert_eq!(realization.n_buildings, 60);
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_small_config(tmp.path(), "unused", "");
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");
    for (out, threads) in [(&out1, "1"), (&out2, "4")] {
        let status = bin()
            .arg("run")
            .arg(&config)
            .arg("--out-dir")
            .arg(out)
            .arg("--threads")
            .arg(threads)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read_outputs(&out1), read_outputs(&out2));
}

#[test]
fn replay_reproduces_outputs_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_small_config(tmp.path(), "unused", "");
    let original = tmp.path().join("orig");
    let replayed = tmp.path().join("replay");
    assert!(bin()
        .arg("run")
        .arg(&config)
        .arg("--out-dir")
        .arg(&original)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .arg("run")
        .arg(&config)
        .arg("--out-dir")
        .arg(&replayed)
        .arg("--replay")
        .arg(original.join("realization.json"))
        .status()
        .unwrap()
        .success());
    assert_eq!(read_outputs(&original), read_outputs(&replayed));
}

#[test]
fn validate_reports_all_violations_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_small_config(tmp.path(), "out", "");
    let output = bin().arg("validate").arg(&good).output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("no violations"));

    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        r#"{
  "master_seed": 1,
  "outputs": "out",
  "community": {"generate": {"occupancy_rate": 1.7}},
  "catalog": null,
  "solver": {"gamma": 1.5, "n_mc_min": 0}
}"#,
    )
    .unwrap();
    let output = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let report = String::from_utf8_lossy(&output.stdout);
    assert!(report.contains("gamma"), "{report}");
    assert!(report.contains("catalog"), "{report}");
    assert!(report.contains("occupancy_rate"), "{report}");

    let garbage = tmp.path().join("garbage.json");
    fs::write(&garbage, "{not json").unwrap();
    let output = bin().arg("validate").arg(&garbage).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("parse"));
}

#[test]
fn run_fails_with_stage_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let output = bin().arg("run").arg(&missing).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("config stage"));
}

#[test]
fn community_file_round_trips_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let config = TestbedConfig {
        grid_rows: 3,
        grid_cols: 2,
        n_buildings: 200,
        total_population: 650,
        ..TestbedConfig::default()
    };
    let model = generate_testbed(&config, &Stream::new(99)).unwrap();
    let path = tmp.path().join("community.json");
    save_community(&model, &path).unwrap();
    let loaded = load_community(&path).unwrap();
    assert_eq!(model, loaded);
    // Saving the loaded model reproduces the file byte for byte.
    let path2 = tmp.path().join("community2.json");
    save_community(&loaded, &path2).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
}

#[test]
fn community_load_rejects_bad_cell_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.json");
    fs::write(
        &path,
        r#"{
  "meta": {"total_population": 3, "age_fractions": [0.0, 1.0, 0.0]},
  "cells": [{"cell_id": 0, "centroid": [0.0, 0.0], "building_ids": [0]}],
  "buildings": [
    {"id": 0, "cell_id": 99, "occupants": [0, 3, 0], "occupied": true, "archetype_id": 0}
  ]
}"#,
    )
    .unwrap();
    let err = load_community(&path).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("building 0"), "{msg}");
    assert!(msg.contains("99"), "{msg}");

    let empty = tmp.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    assert!(load_community(&empty).is_err());
}

#[test]
fn generate_community_subcommand_writes_loadable_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_small_config(tmp.path(), "out", "");
    let out = tmp.path().join("community.json");
    assert!(bin()
        .arg("generate-community")
        .arg(&config)
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let model = load_community(&out).unwrap();
    assert_eq!(model.n_buildings(), 60);

    // A config that loads this file validates cleanly.
    let loading = tmp.path().join("loading.json");
    fs::write(
        &loading,
        format!(
            r#"{{
  "master_seed": 1,
  "outputs": "{}",
  "community": {{"load": "community.json"}},
  "catalog": "catalog.json"
}}"#,
            tmp.path().join("out2").display()
        ),
    )
    .unwrap();
    let parsed = RunConfig::load(&loading).unwrap();
    assert!(validate_config(&parsed, tmp.path()).is_empty());
}

#[test]
fn undamaged_scenario_yields_single_curve_row() {
    // Shaking far too weak to damage anything: the curve is one full-
    // population row at elapsed 0 (no checkpoints configured).
    let tmp = tempfile::tempdir().unwrap();
    let catalog = tmp.path().join("catalog.json");
    fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default_catalog.json"),
        &catalog,
    )
    .unwrap();
    let config = tmp.path().join("quiet.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "master_seed": 3,
  "replications": 1,
  "outputs": "{}",
  "policy": "base",
  "checkpoint_days": [],
  "community": {{
    "generate": {{
      "grid_rows": 2, "grid_cols": 2, "n_buildings": 40,
      "total_population": 130, "occupancy_rate": 0.9
    }}
  }},
  "scenario": {{"gmpe": {{"c0": -40.0, "c1": 0.8, "c2": -1.0, "c3": 10.0, "tau": 0.0, "phi": 0.0}}}},
  "catalog": "catalog.json"
}}"#,
            tmp.path().join("out").display()
        ),
    )
    .unwrap();
    assert!(bin().arg("run").arg(&config).status().unwrap().success());
    let curve = fs::read_to_string(tmp.path().join("out/recovery_curve.csv")).unwrap();
    let rows: Vec<&str> = curve.trim_end().lines().collect();
    assert_eq!(rows.len(), 2, "header plus one row: {curve}");
    // kind, policy, replication, epoch 0, elapsed 0, full population.
    assert!(rows[1].starts_with("epoch,base,0,0,0,130,"), "{}", rows[1]);
}

#[test]
fn unwritable_output_path_fails_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let config = TestbedConfig {
        grid_rows: 1,
        grid_cols: 1,
        n_buildings: 2,
        total_population: 4,
        ..TestbedConfig::default()
    };
    let model = generate_testbed(&config, &Stream::new(1)).unwrap();
    let bad = tmp.path().join("no_such_dir").join("community.json");
    let err = save_community(&model, &bad).unwrap_err();
    assert!(format!("{err:#}").contains("community.json"));
}
