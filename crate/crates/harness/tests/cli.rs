use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nela_core::environment::random_unit_columns;
use nela_core::io::write_matrix_csv;
use nela_core::MetricsLog;
use nela_harness::runner::write_results;
use nela_harness::{simulate, ExperimentConfig, PolicyKind, ReplayData, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn nela(args: &[&str], workers: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nela"))
        .args(args)
        .env("NELA_WORKERS", workers.to_string())
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every CSV under `dir`, keyed by relative path.
fn csv_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_horizon_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let out = nela(&["synthetic", "--horizon", "0", "--out", s(tmp.path())], 1);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn unknown_policy_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let out = nela(&["toy", "--policies", "nela,thompson", "--out", s(tmp.path())], 1);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_replay_file_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = nela(
        &[
            "replay",
            "--user-features",
            s(&missing),
            "--item-features",
            s(&missing),
            "--out",
            s(tmp.path()),
        ],
        1,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toy_run_writes_logs_aggregates_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("toy");
    let out = nela(
        &["toy", "--graph", "full", "--gamma", "0", "--horizon", "200", "--seeds", "1", "--out", s(&dir)],
        2,
    );
    ok(&out);
    for p in PolicyKind::ALL {
        assert!(dir.join(format!("logs/{p}_seed1.csv")).is_file());
        assert!(dir.join(format!("aggregate_{p}.csv")).is_file());
    }
    let header = fs::read_to_string(dir.join("logs/nela_seed1.csv")).unwrap();
    assert!(header.starts_with("t,instant_regret,cum_regret,precision,recall,detected_count\n"));
    assert_eq!(header.lines().count(), 201);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1]));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["policies"][0]["wall_clock_secs"].as_f64().unwrap() >= 0.0);

    // Anomaly-free complete graph: the two networked policies stay close.
    let nela_log = MetricsLog::read_csv(&dir.join("logs/nela_seed1.csv"), "nela", 1).unwrap();
    let colin_log = MetricsLog::read_csv(&dir.join("logs/colin_seed1.csv"), "colin", 1).unwrap();
    let (a, b) = (nela_log.cum_regret(), colin_log.cum_regret());
    assert!((a - b).abs() <= 0.15 * b, "nela {a} vs colin {b}");
}

#[test]
fn config_file_with_flag_override() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(
        &cfg_path,
        "scenario = \"toy-star\"\nhorizon = 30\nseeds = [4, 5]\npolicies = [\"nela\", \"linucb\"]\n",
    )
    .unwrap();
    let dir = tmp.path().join("out");
    ok(&nela(&["toy", "--config", s(&cfg_path), "--horizon", "40", "--out", s(&dir)], 1));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["horizon"], 40);
    assert_eq!(manifest["config"]["scenario"], "toy-star");
    assert_eq!(manifest["config"]["n"], 4);
    let files = csv_files(&dir);
    assert_eq!(files.len(), 4 + 2);
    assert!(files.contains_key(Path::new("logs/linucb_seed5.csv")));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, "horizonn = 30\n").unwrap();
    let out = nela(&["synthetic", "--config", s(&cfg_path), "--out", s(tmp.path())], 1);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let args = |dir: &Path| {
        vec![
            "synthetic".to_string(),
            "--n".into(),
            "12".into(),
            "--d".into(),
            "4".into(),
            "--arms".into(),
            "10".into(),
            "--horizon".into(),
            "150".into(),
            "--anomalies".into(),
            "2".into(),
            "--seeds".into(),
            "1..3".into(),
            "--out".into(),
            dir.to_str().unwrap().to_string(),
        ]
    };
    let mut runs = Vec::new();
    for (i, workers) in [1, 4, 4].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let a = args(&dir);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        ok(&nela(&refs, workers));
        runs.push(csv_files(&dir));
    }
    assert_eq!(runs[0].len(), 5 * 3 + 5);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
}

#[test]
fn sweep_writes_one_aggregate_per_cell() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("sweep");
    ok(&nela(
        &["sweep", "--n", "6", "--d", "4", "--arms", "5", "--horizon", "20", "--anomalies", "1", "--seeds", "1", "--out", s(&dir)],
        2,
    ));
    let aggregates: Vec<PathBuf> = csv_files(&dir)
        .into_keys()
        .filter(|p| p.file_name().unwrap() == "aggregate_nela.csv")
        .collect();
    assert_eq!(aggregates.len(), 9);
    assert!(dir.join("gamma2_nz1/aggregate_nela.csv").is_file());
    assert!(dir.join("gamma10_nz3/aggregate_nela.csv").is_file());
}

#[test]
fn plot_data_rebuilds_aggregates() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("sweep");
    ok(&nela(
        &["sweep", "--n", "6", "--d", "3", "--arms", "4", "--horizon", "15", "--anomalies", "1", "--gamma", "2,5", "--nonzero-dims", "1", "--seeds", "1,2", "--out", s(&dir)],
        1,
    ));
    let before = csv_files(&dir);
    for cell in ["gamma2_nz1", "gamma5_nz1"] {
        fs::remove_file(dir.join(cell).join("aggregate_nela.csv")).unwrap();
    }
    let out = nela(&["plot-data", "--dir", s(&dir)], 1);
    ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    assert_eq!(csv_files(&dir), before);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(nela(&["plot-data", "--dir", s(&empty)], 1).status.code(), Some(2));
}

fn replay_config(out: &Path, users: &Path, items: &Path) -> ExperimentConfig {
    ExperimentConfig {
        horizon: 120,
        arms: 8,
        anomalies: 2,
        gamma: vec![3.0],
        seeds: vec![1, 2],
        out: out.to_path_buf(),
        user_features: Some(users.to_path_buf()),
        item_features: Some(items.to_path_buf()),
        ..ExperimentConfig::for_scenario(Scenario::Replay)
    }
}

#[test]
fn replay_from_files_matches_in_memory_run() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let users = random_unit_columns::<f64, _>(5, 15, &mut rng);
    let items = random_unit_columns::<f64, _>(5, 30, &mut rng);
    let (up, ip) = (tmp.path().join("users.csv"), tmp.path().join("items.csv"));
    write_matrix_csv(&up, &users).unwrap();
    write_matrix_csv(&ip, &items).unwrap();

    let cfg = replay_config(&tmp.path().join("a"), &up, &ip);
    let from_files = simulate(&cfg, None, 2).unwrap();
    let loaded = ReplayData::load(&up, &ip).unwrap();
    let in_memory = simulate(&cfg, Some(ReplayData::new(users.clone(), items.clone()).unwrap()), 2).unwrap();
    assert_eq!(loaded.users, users);
    assert_eq!(loaded.items, items);
    assert_eq!(from_files[0].logs, in_memory[0].logs);

    // Same thing through the binary.
    let dir = tmp.path().join("cli");
    ok(&nela(
        &["replay", "--user-features", s(&up), "--item-features", s(&ip), "--horizon", "120", "--arms", "8", "--anomalies", "2", "--gamma", "3", "--seeds", "1,2", "--out", s(&dir)],
        3,
    ));
    write_results(&cfg, &in_memory).unwrap();
    assert_eq!(csv_files(&dir), csv_files(&cfg.out));
}

#[test]
fn replay_rejects_mismatched_dimensions() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (up, ip) = (tmp.path().join("u.csv"), tmp.path().join("i.csv"));
    write_matrix_csv(&up, &random_unit_columns::<f64, _>(4, 6, &mut rng)).unwrap();
    write_matrix_csv(&ip, &random_unit_columns::<f64, _>(5, 6, &mut rng)).unwrap();
    let out = nela(
        &["replay", "--user-features", s(&up), "--item-features", s(&ip), "--out", s(tmp.path())],
        1,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replay_cannot_offer_more_arms_than_items() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let users = random_unit_columns::<f64, _>(4, 6, &mut rng);
    let items = random_unit_columns::<f64, _>(4, 7, &mut rng);
    let mut cfg = replay_config(tmp.path(), Path::new("-"), Path::new("-"));
    cfg.anomalies = 0;
    cfg.arms = 7;
    assert!(simulate(&cfg, Some(ReplayData::new(users.clone(), items.clone()).unwrap()), 1).is_ok());
    cfg.arms = 8;
    let err = simulate(&cfg, Some(ReplayData::new(users, items).unwrap()), 1).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn replay_smoke_run_at_full_scale() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (up, ip) = (tmp.path().join("users.csv"), tmp.path().join("items.csv"));
    write_matrix_csv(&up, &random_unit_columns::<f64, _>(10, 100, &mut rng)).unwrap();
    write_matrix_csv(&ip, &random_unit_columns::<f64, _>(10, 200, &mut rng)).unwrap();
    let dir = tmp.path().join("out");
    ok(&nela(
        &["replay", "--user-features", s(&up), "--item-features", s(&ip), "--anomalies", "5", "--horizon", "1000", "--seeds", "1", "--out", s(&dir)],
        4,
    ));
    for p in PolicyKind::ALL {
        let log = MetricsLog::read_csv(&dir.join(format!("logs/{p}_seed1.csv")), p.as_str(), 1).unwrap();
        assert_eq!(log.rounds.len(), 1000);
        assert!(log.rounds.iter().all(|r| r.instant_regret >= 0.0 && r.cum_regret.is_finite()));
        assert!(log.rounds.iter().all(|r| (0.0..=1.0).contains(&r.precision)));
    }
}
