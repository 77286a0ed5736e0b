//! End-to-end checks of the `rea` binary: artifacts, exit codes,
//! determinism, and the prediction round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rea"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn rea_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rea"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Minimal config for a small dated synthetic dataset.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let out_dir = dir.join("out");
    let config = format!(
        r#"{{
  "out_dir": {out:?},
  "synth": {{ "n": 500, "seed": 3, "feature_dim": 4, "span_days": 2000 }},
  "dataset": {{
    "path": {data:?},
    "schema": {{ "id": "id", "lat": "lat", "lon": "lon", "date": "date",
                 "price": "price", "features": ["f1", "f2", "f3", "f4"] }}
  }},
  "split": {{ "mode": "temporal", "offset_years": 1.0, "train_frac": 0.8, "val_frac": 0.1 }},
  "train": {{ "variant": "erea", "k1": 2, "mode": "hybrid", "epochs": 2,
              "batch_size": 32, "seed": 5,
              "arch": {{ "embed_dim": 8, "encoder_hidden": [8] }} }}{extra}
}}"#,
        out = out_dir.to_str().unwrap(),
        data = out_dir.join("dataset.csv").to_str().unwrap(),
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}

fn prepare_trained(dir: &Path, extra: &str) -> PathBuf {
    let config = write_config(dir, extra);
    let c = config.to_str().unwrap();
    for cmd in ["gen-synth", "split", "train"] {
        let out = rea(&[cmd, "--config", c]);
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
    config
}

#[test]
fn gen_synth_writes_dataset_and_latents() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out = rea(&["gen-synth", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let data = dir.path().join("out/dataset.csv");
    assert!(data.exists());
    let latents: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/dataset_latents.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(latents["hedonic_coefs"].as_array().unwrap().len(), 4);

    let schema = rea_core::data::CsvSchema::standard(4, true, false);
    let ds = rea_core::data::load_csv(&data, &schema).unwrap();
    assert_eq!(ds.len(), 500);
}

#[test]
fn split_artifacts_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let c = config.to_str().unwrap();
    assert!(rea(&["gen-synth", "--config", c]).status.success());
    assert!(rea(&["split", "--config", c]).status.success());
    let first = std::fs::read(dir.path().join("out/split.json")).unwrap();
    assert!(rea(&["split", "--config", c]).status.success());
    let second = std::fs::read(dir.path().join("out/split.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn train_writes_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    prepare_trained(dir.path(), "");
    let out_dir = dir.path().join("out");
    for name in [
        "train_log.jsonl",
        "checkpoint_final.rck",
        "checkpoint_refresh_prev.rck",
        "checkpoint_refresh_last.rck",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let log = std::fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 0);
    assert_eq!(first["encoder_lr"], 1e-3);
}

#[test]
fn eval_with_missing_checkpoint_exits_1_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let c = config.to_str().unwrap();
    assert!(rea(&["gen-synth", "--config", c]).status.success());
    assert!(rea(&["split", "--config", c]).status.success());

    let out = rea(&["eval", "--config", c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("checkpoint_final.rck"),
        "stderr must name the missing path: {}",
        stderr(&out)
    );
}

#[test]
fn eval_writes_metrics_with_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepare_trained(dir.path(), "");
    let out = rea(&["eval", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let artifact: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/metrics_test.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(artifact["retrieval"], "previous_to_last");
    assert!(artifact["report"]["mdae"].as_f64().unwrap().is_finite());
    assert_eq!(artifact["report"]["config"]["train"]["epochs"], 2);
    assert!(artifact["latest_table"]["mdae"].as_f64().is_some());
}

#[test]
fn predict_respects_invariants_and_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepare_trained(dir.path(), "");
    let c = config.to_str().unwrap();

    // pick a test-partition target from the split artifact
    let split: rea_core::data::SplitSpec =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/split.json")).unwrap())
            .unwrap();
    let target_id = *split.test_ids.last().unwrap();
    let out = rea(&[
        "predict",
        "--config",
        c,
        "--set",
        &format!("predict.target_id={target_id}"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let artifact: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join(format!("out/prediction_{target_id}.json")))
            .unwrap(),
    )
    .unwrap();

    let comis = artifact["comparables"].as_array().unwrap();
    assert!(!comis.is_empty());
    let gamma_sum: f64 = comis.iter().map(|c| c["gamma"].as_f64().unwrap()).sum();
    assert!((gamma_sum - 1.0).abs() < 1e-6);
    let target_date = artifact["target_date"].as_i64().unwrap();
    let mut prev_gamma = f64::INFINITY;
    for comp in comis {
        assert!(comp["date"].as_i64().unwrap() < target_date);
        assert_ne!(comp["id"].as_u64().unwrap(), target_id);
        let g = comp["gamma"].as_f64().unwrap();
        assert!(g <= prev_gamma);
        prev_gamma = g;
    }

    // v_star equals an independent recomputation through the library
    let schema = rea_core::data::CsvSchema::standard(4, true, false);
    let dataset = rea_core::data::load_csv(dir.path().join("out/dataset.csv"), &schema).unwrap();
    let (model, manifest) =
        rea_core::checkpoint::load_checkpoint(dir.path().join("out/checkpoint_final.rck")).unwrap();
    let (retr_model, retr_manifest) =
        rea_core::checkpoint::load_checkpoint(dir.path().join("out/checkpoint_refresh_prev.rck"))
            .unwrap();
    let prepared =
        rea_core::train::Prepared::new(&dataset, manifest.scaler.clone(), manifest.transform)
            .unwrap();
    let index = rea_core::geo::GeoIndex::build(&dataset).unwrap();
    let ctx = rea_core::train::EvalContext::new(&prepared, &index, &split, &manifest.train_config);
    let table = rea_core::train::refresh_embeddings(
        &retr_model,
        &prepared,
        &split.pool_ids(),
        retr_manifest.epoch.unwrap(),
    )
    .unwrap();
    let (detail, _) =
        rea_core::train::predict_detail(&model, &table, &ctx, dataset.get(target_id).unwrap())
            .unwrap();
    assert_eq!(detail.v_star, artifact["v_star"].as_f64().unwrap());
}

#[test]
fn predict_accepts_ad_hoc_record_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepare_trained(dir.path(), "");
    let c = config.to_str().unwrap();

    let row_path = dir.path().join("adhoc.csv");
    std::fs::write(
        &row_path,
        "id,lat,lon,date,price,f1,f2,f3,f4\n999999,48.2,-1.7,2022-06-01,100000,0.1,-0.4,1.2,0.3\n",
    )
    .unwrap();
    let out = rea(&[
        "predict",
        "--config",
        c,
        "--set",
        &format!("predict.record_csv={:?}", row_path.to_str().unwrap()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let artifact: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/prediction_999999.json")).unwrap(),
    )
    .unwrap();
    assert!(artifact["pred_price"].as_f64().unwrap() > 0.0);
    // strictly-past filter applies to the ad-hoc date too
    let target_date = artifact["target_date"].as_i64().unwrap();
    for comp in artifact["comparables"].as_array().unwrap() {
        assert!(comp["date"].as_i64().unwrap() < target_date);
    }
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"out_dir": "x", "typo_field": 1}"#).unwrap();
    let out = rea(&["split", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("typo_field"));
}

#[test]
fn held_lock_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/.lock"), "held").unwrap();
    let out = rea(&["gen-synth", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(".lock"));
}

#[test]
fn set_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let c = config.to_str().unwrap();
    assert!(rea(&["gen-synth", "--config", c]).status.success());
    assert!(rea(&["split", "--config", c]).status.success());
    let out = rea(&["train", "--config", c, "--set", "train.epochs=1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(dir.path().join("out/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn out_root_env_resolves_relative_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{ "out_dir": "nested/run",
             "synth": { "n": 5, "seed": 1, "feature_dim": 2, "dated": false } }"#,
    )
    .unwrap();
    let out = rea_env(
        &["gen-synth", "--config", config_path.to_str().unwrap()],
        "REA_OUT_ROOT",
        dir.path().to_str().unwrap(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("nested/run/dataset.csv").exists());
}

#[test]
fn sweep_writes_cell_and_aggregate_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let c = config.to_str().unwrap();
    assert!(rea(&["gen-synth", "--config", c]).status.success());
    assert!(rea(&["split", "--config", c]).status.success());
    let out = rea(&[
        "sweep",
        "--config",
        c,
        "--set",
        "sweep.modes=[\"geo_only\"]",
        "--set",
        "sweep.k_list=[2]",
        "--set",
        "sweep.seeds=[0,1]",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cells = std::fs::read_to_string(dir.path().join("out/sweep_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 3); // header + 2 seeds
    assert!(cells.starts_with("mode,total_comparables,seed,mdae,mdabre"));
    let agg = std::fs::read_to_string(dir.path().join("out/sweep_agg.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2);
}
