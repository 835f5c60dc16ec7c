use std::path::{Path, PathBuf};
use std::process::Command;

use nnsym_cli::config::{Overrides, Subcommand};
use nnsym_cli::idx::{write_idx, IdxDataset};
use serde_json::{json, Value};

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(&value).unwrap()).unwrap();
    path
}

fn run(sub: Subcommand, config: Value, workers: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "config.json", config);
    let out = dir.path().join("out");
    nnsym_cli::execute(sub, Some(&path), &Overrides::default(), workers, &out).unwrap();
    (dir, out)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn exact_process_has_zero_deviation() {
    let (_dir, out) = run(
        Subcommand::CheckSymmetry,
        json!({ "params": {
            "architecture": { "family": "exact_gp", "input_dim": 1, "output_dim": 3 },
            "orders": [2, 4],
            "elements": 20,
        }}),
        1,
    );
    let report = read_json(&out.join("check-symmetry.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert!(row["report"]["mu_m"].as_f64().unwrap() < 1e-10);
    }
    let csv = csv_rows(&out.join("check-symmetry.csv"));
    assert_eq!(csv[0].join(","), "n,D,N,mu_M,sigma_M,delta_M,pass_fraction");
    assert_eq!(csv.len(), 3);
}

#[test]
fn train_grid_on_blobs_writes_epoch_and_summary_tables() {
    let (_dir, out) = run(
        Subcommand::TrainGrid,
        json!({ "seed": 3, "params": { "ks": [0, 1], "mu_ws": [0.0, 0.1], "seeds": [0], "epochs": 2 }}),
        2,
    );
    let epochs = csv_rows(&out.join("train-grid.csv"));
    assert_eq!(epochs[0].join(","), "seed,k,mu_W,epoch,train_loss,acc");
    assert_eq!(epochs.len(), 1 + 2 * 2 * 2);
    let summary = csv_rows(&out.join("train-grid-summary.csv"));
    assert_eq!(summary[0].join(","), "k,mu_W,seeds,mean_acc,std_acc,ci95");
    assert_eq!(summary.len(), 1 + 4);
    for row in &epochs[1..] {
        let acc: f64 = row[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn train_grid_reads_idx_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = |n: usize| IdxDataset {
        rows: 2,
        cols: 2,
        images: (0..4 * n)
            .map(|i| ((i * 37) % 256) as f64 / 255.0)
            .collect(),
        labels: (0..n).map(|i| (i % 10) as u8).collect(),
    };
    for (prefix, n) in [("train", 40), ("t10k", 20)] {
        let (img, lbl) = write_idx(&data(n));
        std::fs::write(dir.path().join(format!("{prefix}-images-idx3-ubyte")), img).unwrap();
        std::fs::write(dir.path().join(format!("{prefix}-labels-idx1-ubyte")), lbl).unwrap();
    }
    let config = write_config(
        dir.path(),
        "config.json",
        json!({ "params": {
            "dataset": { "kind": "fashion_mnist", "dir": dir.path() },
            "width": 8, "ks": [10], "mu_ws": [0.1], "seeds": [0], "epochs": 1,
        }}),
    );
    let out = dir.path().join("out");
    nnsym_cli::execute(
        Subcommand::TrainGrid,
        Some(&config),
        &Overrides::default(),
        1,
        &out,
    )
    .unwrap();
    assert_eq!(csv_rows(&out.join("train-grid.csv")).len(), 2);
}

#[test]
fn gp_discrepancy_falls_with_width() {
    let (_dir, out) = run(
        Subcommand::GpLimit,
        json!({ "samples": 100_000, "params": { "widths": [1, 1000] }}),
        1,
    );
    let report = read_json(&out.join("gp-limit.json"));
    assert_eq!(report["strictly_decreasing"], json!(true));
}

#[test]
fn one_cold_summary_is_sorted_by_weight_mean() {
    let (_dir, out) = run(
        Subcommand::TrainOnecold,
        json!({ "params": { "mu_ws": [0.2, 0.0, 0.1], "seeds": [0], "epochs": 1 }}),
        1,
    );
    let summary = csv_rows(&out.join("train-onecold-summary.csv"));
    let mus: Vec<f64> = summary[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(mus, vec![0.0, 0.1, 0.2]);
    let report = read_json(&out.join("train-onecold.json"));
    assert!(report["interior_peak"].is_boolean());
}

#[test]
fn invalid_config_names_field_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "bad.json", json!({ "params": { "widths": [] }}));
    let err = nnsym_cli::execute(
        Subcommand::GpLimit,
        Some(&config),
        &Overrides::default(),
        1,
        &out,
    )
    .unwrap_err();
    assert!(format!("{err:#}").contains("field `widths`"), "{err:#}");
    assert!(!out.exists());

    let config = write_config(
        dir.path(),
        "unknown.json",
        json!({ "params": { "widht": 3 }}),
    );
    let err = nnsym_cli::execute(
        Subcommand::Ward,
        Some(&config),
        &Overrides::default(),
        1,
        &out,
    )
    .unwrap_err();
    assert!(format!("{err:#}").contains("widht"), "{err:#}");
    assert!(!out.exists());
}

#[test]
fn binary_rejects_unknown_subcommand() {
    let output = Command::new(env!("CARGO_BIN_EXE_nnsym"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("frobnicate"));
}

#[test]
fn binary_reports_bad_config_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.json", json!({ "params": { "k": 9 }}));
    let output = Command::new(env!("CARGO_BIN_EXE_nnsym"))
        .args(["ward", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error:"));
    assert!(!dir.path().join("out").exists());
}

fn ward_config() -> Value {
    json!({ "seed": 11, "samples": 5_000 })
}

#[test]
fn replay_reproduces_every_file() {
    let (dir, out) = run(Subcommand::Ward, ward_config(), 2);
    let again = dir.path().join("replayed");
    nnsym_cli::replay(&out.join("manifest.json"), None, &again).unwrap();
    for name in ["ward.json", "ward.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(out.join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let (_a, one) = run(Subcommand::Ward, ward_config(), 1);
    let (_b, three) = run(Subcommand::Ward, ward_config(), 3);
    assert_eq!(
        std::fs::read(one.join("ward.json")).unwrap(),
        std::fs::read(three.join("ward.json")).unwrap()
    );
    let (m1, m3) = (
        read_json(&one.join("manifest.json")),
        read_json(&three.join("manifest.json")),
    );
    assert_eq!(m1["config_hash"], m3["config_hash"]);
}

#[test]
fn tampered_manifest_is_rejected() {
    let (dir, out) = run(Subcommand::Ward, ward_config(), 1);
    let mut manifest = read_json(&out.join("manifest.json"));
    manifest["config"]["seed"] = json!(12);
    let path = write_config(dir.path(), "tampered.json", manifest);
    assert!(nnsym_cli::replay(&path, None, &dir.path().join("again")).is_err());
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", ward_config());
    let over = Overrides {
        seed: Some(99),
        samples: None,
    };
    let out = dir.path().join("out");
    nnsym_cli::execute(Subcommand::Ward, Some(&config), &over, 1, &out).unwrap();
    assert_eq!(read_json(&out.join("manifest.json"))["seed"], json!(99));
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let file = nnsym_cli::config::read_config(&path).unwrap();
        let sub = file.subcommand.expect("configs name their subcommand");
        nnsym_cli::config::resolve(sub, file, &Overrides::default())
            .unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        seen += 1;
    }
    assert!(seen > 0);
}
