//! End-to-end runs of the `cdnet` binary: config files, data formats,
//! checkpoints, traces, tables, exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cdnet"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cdnet-cli-{}-{tag}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.txt");
    fs::write(
        &path,
        "# tiny experiment\n\
         d = 8\nk = 4\nn = 3\nblocks = 1\nheads = 2\nl_max = 12\n\
         lr = 0.003\nbatch_size = 64\nepochs = 2\nmlp_hidden = 16\npatience = 99\n\
         synth_samples = 1500\nsynth_seq_len = 12\nsynth_users = 80\nsynth_items = 120\n\
         synth_categories = 8\nsynth_k_true = 2\nsynth_max_relevant = 6\n\
         synth_w_count = 0.5\nsynth_w_threshold = 1.5\nsynth_noise_std = 0.4\nsynth_bias = -2.5\n",
    )
    .unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn cdnet");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = workdir("train");
    let config = write_config(&dir);
    let data = dir.join("data.cdns");
    run_ok(bin().args([
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "3",
    ]));
    assert!(data.exists());

    let out_dir = dir.join("run");
    let train_out = run_ok(bin().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]));
    assert!(out_dir.join("model.cdnt").exists());
    assert!(out_dir.join("trace.jsonl").exists());

    // The trace's recorded test metrics must be reproduced by eval.
    let stdout = String::from_utf8_lossy(&train_out.stdout);
    let test_line = stdout
        .lines()
        .find(|l| l.contains("\"split\":\"test\""))
        .expect("train prints a test record");
    let recorded: serde_json::Value = serde_json::from_str(test_line).unwrap();

    let eval_out = run_ok(bin().args([
        "eval",
        "--checkpoint",
        out_dir.join("model.cdnt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "test",
    ]));
    let eval_stdout = String::from_utf8_lossy(&eval_out.stdout);
    let evaluated: serde_json::Value =
        serde_json::from_str(eval_stdout.lines().next().unwrap()).unwrap();
    for key in ["auc", "gauc", "logloss"] {
        let a = recorded[key].as_f64().unwrap();
        let b = evaluated[key].as_f64().unwrap();
        assert!(
            (a - b).abs() < 1e-6,
            "{key} mismatch between trace ({a}) and eval ({b})"
        );
    }
    fs::remove_dir_all(dir).ok();
}

#[test]
fn ablate_emits_exactly_three_rows() {
    let dir = workdir("ablate");
    let config = write_config(&dir);
    let data = dir.join("data.cdns");
    run_ok(bin().args([
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]));
    let out_dir = dir.join("abl");
    run_ok(bin().args([
        "ablate",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let table = fs::read_to_string(out_dir.join("ablate.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "ablate table: {table}");
    for (row, variant) in rows.iter().zip(["cdnet", "rcore", "rgid"]) {
        assert!(row.starts_with(variant), "row {row:?}");
    }
    fs::remove_dir_all(dir).ok();
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = workdir("sweep");
    let config = write_config(&dir);
    let data = dir.join("data.cdns");
    run_ok(bin().args([
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]));
    let out_dir = dir.join("sw");
    run_ok(bin().args([
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--axis",
        "n",
        "--values",
        "2,5",
    ]));
    let table = fs::read_to_string(out_dir.join("sweep.tsv")).unwrap();
    assert_eq!(table.lines().count(), 3); // header + 2 rows
    fs::remove_dir_all(dir).ok();
}

#[test]
fn bench_reports_exact_quadratic_ratio() {
    let out = run_ok(bin().args([
        "bench", "--L", "600", "--k", "16", "--n-f", "20", "--d", "16", "--reps", "1",
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let row = stdout.lines().nth(1).expect("one data row");
    let cols: Vec<&str> = row.split('\t').collect();
    let predicted: f64 = cols[7].parse().unwrap();
    let counted: f64 = cols[8].parse().unwrap();
    assert!((predicted - counted).abs() < 1e-9);
    assert!((predicted - (37.0f64 / 620.0).powi(2)).abs() < 1e-6);
}

#[test]
fn csv_logs_are_ingested_and_unknown_keys_rejected() {
    let dir = workdir("csv");
    // A small two-user click log in the public column layout.
    let mut csv = String::new();
    for i in 0..12 {
        csv.push_str(&format!("1,{},{},pv,{}\n", 100 + i, 10 + (i % 3), 1000 + i));
    }
    for i in 0..12 {
        csv.push_str(&format!("2,{},{},pv,{}\n", 200 + i, 20 + (i % 3), 2000 + i));
    }
    let log = dir.join("log.csv");
    fs::write(&log, csv).unwrap();
    let config = write_config(&dir);
    let out_dir = dir.join("run");
    run_ok(bin().args([
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        log.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--epochs",
        "1",
    ]));
    assert!(out_dir.join("model.cdnt").exists());

    // Unknown config key: nonzero exit, message names the key.
    let bad = dir.join("bad.txt");
    fs::write(&bad, "mystery_knob = 3\n").unwrap();
    let out = bin()
        .args([
            "train",
            "--config",
            bad.to_str().unwrap(),
            "--data",
            log.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery_knob"));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn training_is_deterministic_under_seed() {
    let dir = workdir("determinism");
    let config = write_config(&dir);
    let data = dir.join("data.cdns");
    run_ok(bin().args([
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "5",
    ]));
    let mut traces = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.join(run);
        run_ok(bin().args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "13",
        ]));
        traces.push(fs::read(out_dir.join("trace.jsonl")).unwrap());
    }
    assert_eq!(traces[0], traces[1], "trace files differ between identical runs");
    fs::remove_dir_all(dir).ok();
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let out = bin().args(["train", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--no-such-flag") || stderr.to_lowercase().contains("usage"));
}

#[test]
fn missing_data_file_fails_cleanly() {
    let dir = workdir("missing");
    let config = write_config(&dir);
    let out = bin()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            "/nonexistent/never.csv",
            "--out",
            dir.join("x").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("never.csv"));
    fs::remove_dir_all(dir).ok();
}
