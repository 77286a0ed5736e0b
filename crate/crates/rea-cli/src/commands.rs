//! Subcommand implementations. Each command takes an exclusive lock on the
//! output directory and writes its artifacts there.

use std::io::Write;
use std::path::{Path, PathBuf};

use rea_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CheckpointRole};
use rea_core::data::{
    generate_synthetic, load_csv, random_split, temporal_split, write_csv, Dataset, Partition,
    PropertyRecord, SplitMode, SplitSpec,
};
use rea_core::geo::GeoIndex;
use rea_core::metrics::{
    aggregate_sweep, baseline_report, baseline_report_csv, sweep_aggregate_csv, sweep_retrieval,
    sweep_rows_csv, MetricsReport,
};
use rea_core::model::ModelParams;
use rea_core::train::{
    self, evaluate, predict_detail, refresh_embeddings, EmbeddingTable, EvalContext,
    PredictionDetail, Prepared,
};

use crate::config::RunConfig;
use crate::CliError;

fn validation(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

/// Exclusive `.lock` file in the output directory, removed on drop.
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(out_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| validation(format!("cannot create {}: {e}", out_dir.display())))?;
        let path = out_dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(validation(format!(
                "{} exists: another command is running against this output directory",
                path.display()
            ))),
            Err(e) => Err(validation(format!("cannot lock {}: {e}", path.display()))),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let dataset = config
        .dataset
        .as_ref()
        .ok_or_else(|| validation("config has no [dataset] section"))?;
    if !dataset.path.exists() {
        return Err(validation(format!(
            "dataset file {} does not exist",
            dataset.path.display()
        )));
    }
    load_csv(&dataset.path, &dataset.schema).map_err(validation)
}

fn load_split(config: &RunConfig) -> Result<SplitSpec, CliError> {
    let path = config.split_path();
    if !path.exists() {
        return Err(validation(format!(
            "split file {} does not exist; run `rea split` first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| validation(format!("split file {}: {e}", path.display())))
}

pub fn cmd_gen_synth(config: &RunConfig) -> Result<(), CliError> {
    let synth = config
        .synth
        .as_ref()
        .ok_or_else(|| validation("config has no [synth] section"))?;
    let (dataset, latents) = generate_synthetic(synth).map_err(validation)?;

    let csv_path = config
        .dataset
        .as_ref()
        .map(|d| d.path.clone())
        .unwrap_or_else(|| config.out_dir.join("dataset.csv"));
    if let Some(parent) = csv_path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_csv(&csv_path, &dataset).map_err(runtime)?;
    println!("wrote {} ({} records)", csv_path.display(), dataset.len());

    let latents_path = csv_path.with_file_name(format!(
        "{}_latents.json",
        csv_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
    ));
    write_json(&latents_path, &latents)?;
    Ok(())
}

pub fn cmd_split(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let s = &config.split;
    let split = match s.mode {
        SplitMode::Temporal => temporal_split(&dataset, s.offset_years, s.train_frac, s.val_frac),
        SplitMode::Random => random_split(&dataset, s.seed, s.train_frac, s.val_frac),
    }
    .map_err(validation)?;
    split.validate(&dataset).map_err(runtime)?;
    write_json(&config.split_path(), &split)?;
    println!(
        "partitions: offset={} train={} val={} test={}",
        split.offset_ids.len(),
        split.train_ids.len(),
        split.val_ids.len(),
        split.test_ids.len()
    );
    Ok(())
}

pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let split = load_split(config)?;
    config.train.validate().map_err(validation)?;

    let out = train::train(&dataset, &split, &config.train).map_err(runtime)?;

    let log_path = config.out_dir.join("train_log.jsonl");
    let mut log = String::new();
    for entry in &out.log {
        log.push_str(&serde_json::to_string(entry).map_err(runtime)?);
        log.push('\n');
    }
    std::fs::write(&log_path, log)
        .map_err(|e| runtime(format!("cannot write {}: {e}", log_path.display())))?;
    println!("wrote {} ({} epochs)", log_path.display(), out.log.len());

    let save = |path: PathBuf, model: &ModelParams, role, epoch| -> Result<(), CliError> {
        save_checkpoint(
            &path,
            model,
            &out.scaler,
            out.transform,
            &config.train,
            role,
            epoch,
        )
        .map_err(runtime)?;
        println!("wrote {}", path.display());
        Ok(())
    };
    save(
        config.out_dir.join("checkpoint_final.rck"),
        &out.model,
        CheckpointRole::Final,
        None,
    )?;
    if let (Some(model), Some(prev)) = (&out.refresh_prev, &out.tables.previous) {
        save(
            config.out_dir.join("checkpoint_refresh_prev.rck"),
            model,
            CheckpointRole::RefreshPrev,
            Some(prev.epoch),
        )?;
    }
    if let Some(model) = &out.refresh_last {
        save(
            config.out_dir.join("checkpoint_refresh_last.rck"),
            model,
            CheckpointRole::RefreshLast,
            Some(out.tables.current.epoch),
        )?;
    }
    if let Some(last) = out.log.last() {
        if let (Some(mdae), Some(mdabre)) = (last.val_mdae, last.val_mdabre) {
            println!("final val mdae={mdae:.4} mdabre={mdabre:.4}");
        }
    }
    Ok(())
}

struct LoadedModel {
    model: ModelParams,
    manifest: CheckpointManifest,
}

fn load_final_checkpoint(config: &RunConfig) -> Result<LoadedModel, CliError> {
    let path = config.checkpoint_path();
    if !path.exists() {
        return Err(validation(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let (model, manifest) = load_checkpoint(&path).map_err(validation)?;
    Ok(LoadedModel { model, manifest })
}

/// Rebuilds the evaluation-time retrieval table: from the penultimate
/// refresh checkpoint when available, otherwise from the final weights.
fn retrieval_table(
    config: &RunConfig,
    loaded: &LoadedModel,
    prepared: &Prepared,
    split: &SplitSpec,
) -> Result<(EmbeddingTable, &'static str, Option<usize>), CliError> {
    let pool = split.pool_ids();
    let prev_path = config.retrieval_checkpoint_path();
    if prev_path.exists() {
        let (model, manifest) = load_checkpoint(&prev_path).map_err(validation)?;
        let epoch = manifest.epoch.unwrap_or(0);
        let table = refresh_embeddings(&model, prepared, &pool, epoch).map_err(runtime)?;
        Ok((table, "previous_to_last", manifest.epoch))
    } else {
        let table = refresh_embeddings(&loaded.model, prepared, &pool, 0).map_err(runtime)?;
        Ok((table, "latest_fallback", None))
    }
}

#[derive(serde::Serialize)]
struct LatestTableDiagnostic {
    mdae: f64,
    mdabre: f64,
    delta_mdae: f64,
}

#[derive(serde::Serialize)]
struct EvalArtifact {
    partition: Partition,
    report: MetricsReport,
    /// Which embedding table retrieval used.
    retrieval: &'static str,
    retrieval_epoch: Option<usize>,
    short_sets: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    latest_table: Option<LatestTableDiagnostic>,
}

pub fn cmd_eval(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let split = load_split(config)?;
    let loaded = load_final_checkpoint(config)?;

    let prepared = Prepared::new(
        &dataset,
        loaded.manifest.scaler.clone(),
        loaded.manifest.transform,
    )
    .map_err(validation)?;
    let index = GeoIndex::build(&dataset).map_err(runtime)?;
    let train_config = loaded.manifest.train_config.clone();
    let ctx = EvalContext::new(&prepared, &index, &split, &train_config);

    let (table, retrieval, retrieval_epoch) = retrieval_table(config, &loaded, &prepared, &split)?;
    let partition = config.eval.partition;
    let outcome = evaluate(&loaded.model, &table, &ctx, partition).map_err(runtime)?;

    // Diagnostic: the same evaluation against the latest refresh table.
    let last_path = config.out_dir.join("checkpoint_refresh_last.rck");
    let latest_table = if retrieval == "previous_to_last" && last_path.exists() {
        let (model, manifest) = load_checkpoint(&last_path).map_err(validation)?;
        let table = refresh_embeddings(
            &model,
            &prepared,
            &split.pool_ids(),
            manifest.epoch.unwrap_or(0),
        )
        .map_err(runtime)?;
        let alt = evaluate(&loaded.model, &table, &ctx, partition).map_err(runtime)?;
        Some(LatestTableDiagnostic {
            mdae: alt.report.mdae,
            mdabre: alt.report.mdabre,
            delta_mdae: alt.report.mdae - outcome.report.mdae,
        })
    } else {
        None
    };

    let mut report = outcome.report;
    report.config = Some(config.echo());
    let artifact = EvalArtifact {
        partition,
        report,
        retrieval,
        retrieval_epoch,
        short_sets: outcome.short_sets,
        latest_table,
    };
    let name = format!(
        "metrics_{}.json",
        serde_json::to_value(partition)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_else(|| "partition".into())
    );
    write_json(&config.out_dir.join(name), &artifact)?;
    println!(
        "{partition:?} mdae={:.4} mdabre={:.4} (n={})",
        artifact.report.mdae, artifact.report.mdabre, artifact.report.n
    );
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let split = load_split(config)?;
    let sweep = &config.sweep;
    if sweep.k_list.is_empty() || sweep.seeds.is_empty() || sweep.modes.is_empty() {
        return Err(validation("sweep needs non-empty modes, k_list and seeds"));
    }

    let rows = sweep_retrieval(
        &dataset,
        &split,
        &config.train,
        &sweep.modes,
        &sweep.k_list,
        &sweep.seeds,
    )
    .map_err(runtime)?;
    let cells_path = config.out_dir.join("sweep_cells.csv");
    std::fs::write(&cells_path, sweep_rows_csv(&rows))
        .map_err(|e| runtime(format!("cannot write {}: {e}", cells_path.display())))?;
    println!("wrote {} ({} cells)", cells_path.display(), rows.len());

    let agg_path = config.out_dir.join("sweep_agg.csv");
    std::fs::write(&agg_path, sweep_aggregate_csv(&aggregate_sweep(&rows)))
        .map_err(|e| runtime(format!("cannot write {}: {e}", agg_path.display())))?;
    println!("wrote {}", agg_path.display());

    if sweep.baselines {
        let baseline_k = sweep.baseline_k.unwrap_or(2 * config.train.k1);
        let table = baseline_report(&dataset, &split, &config.train, &sweep.seeds, baseline_k)
            .map_err(runtime)?;
        let csv_path = config.out_dir.join("table1.csv");
        std::fs::write(&csv_path, baseline_report_csv(&table))
            .map_err(|e| runtime(format!("cannot write {}: {e}", csv_path.display())))?;
        println!("wrote {}", csv_path.display());
        write_json(&config.out_dir.join("table1.json"), &table)?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct PredictArtifact {
    #[serde(flatten)]
    detail: PredictionDetail,
    /// Full price implied by v_star (unit value times surface for per-sqm
    /// targets).
    pred_price: f64,
    retrieval: &'static str,
}

fn predict_target(config: &RunConfig, dataset: &Dataset) -> Result<PropertyRecord, CliError> {
    match (&config.predict.target_id, &config.predict.record_csv) {
        (Some(id), None) => dataset
            .get(*id)
            .cloned()
            .ok_or_else(|| validation(format!("target id {id} not found in the dataset"))),
        (None, Some(path)) => {
            let schema = &config
                .dataset
                .as_ref()
                .ok_or_else(|| validation("config has no [dataset] section"))?
                .schema;
            let rows = load_csv(path, schema).map_err(validation)?;
            if rows.len() != 1 {
                return Err(validation(format!(
                    "{} must contain exactly one record, found {}",
                    path.display(),
                    rows.len()
                )));
            }
            Ok(rows.records()[0].clone())
        }
        _ => Err(validation(
            "predict needs exactly one of predict.target_id or predict.record_csv",
        )),
    }
}

pub fn cmd_predict(config: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(config)?;
    let split = load_split(config)?;
    let loaded = load_final_checkpoint(config)?;
    if loaded.manifest.feature_dim != dataset.feature_dim() {
        return Err(validation(format!(
            "checkpoint was trained on {} features, dataset has {}",
            loaded.manifest.feature_dim,
            dataset.feature_dim()
        )));
    }
    let target = predict_target(config, &dataset)?;

    let prepared = Prepared::new(
        &dataset,
        loaded.manifest.scaler.clone(),
        loaded.manifest.transform,
    )
    .map_err(validation)?;
    let index = GeoIndex::build(&dataset).map_err(runtime)?;
    let train_config = loaded.manifest.train_config.clone();
    let ctx = EvalContext::new(&prepared, &index, &split, &train_config);
    let (table, retrieval, _) = retrieval_table(config, &loaded, &prepared, &split)?;

    let (detail, _short) = predict_detail(&loaded.model, &table, &ctx, &target).map_err(runtime)?;
    let pred_price = loaded
        .manifest
        .transform
        .invert(detail.v_star, target.surface)
        .map_err(runtime)?;

    let artifact = PredictArtifact {
        detail,
        pred_price,
        retrieval,
    };
    write_json(
        &config
            .out_dir
            .join(format!("prediction_{}.json", target.id)),
        &artifact,
    )?;
    println!(
        "predicted unit value {:.4} (price {:.2}) with {} comparables",
        artifact.detail.pred_unit,
        artifact.pred_price,
        artifact.detail.comparables.len()
    );
    Ok(())
}
