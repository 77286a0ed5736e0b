//! The alternating optimization loop.
//!
//! Each epoch refreshes the embedding index with the latest encoder
//! weights, resamples every training target's comparables once, then runs
//! minibatch Adam with a decayed learning rate on the encoder segment.
//! Evaluation retrieves with the previous-to-last embedding table and the
//! final weights, applying the strictly-past filter per target date.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    Dataset, Partition, PropertyRecord, ScalerParams, SplitSpec, TargetKind, TargetTransform,
    DAYS_PER_YEAR,
};
use crate::error::{Error, Result};
use crate::geo::{GeoIndex, RetrievalFilter};
use crate::metrics::{mdabre, mdae, MetricsReport};
use crate::model::{
    ArchConfig, BatchItem, ComparableEntry, ComparableSet, ModelParams, Source, Variant,
};
use crate::neural::{adam_step_segmented, dot, AdamState, DenseStack};

/// Which retrievers supply the `2 * k1` comparables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    GeoOnly,
    VectorOnly,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub target_kind: TargetKind,
    pub k1: usize,
    pub mode: RetrievalMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub encoder_decay: f64,
    pub seed: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Erea,
            target_kind: TargetKind::LogPrice,
            k1: 5,
            mode: RetrievalMode::Hybrid,
            epochs: 50,
            batch_size: 64,
            base_lr: 1e-3,
            encoder_decay: 0.98,
            seed: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Geo-sourced comparables per target.
    pub fn k_geo(&self) -> usize {
        match self.mode {
            RetrievalMode::GeoOnly => 2 * self.k1,
            RetrievalMode::VectorOnly => 0,
            RetrievalMode::Hybrid => self.k1,
        }
    }

    /// Vector-sourced comparables per target.
    pub fn k_vec(&self) -> usize {
        match self.mode {
            RetrievalMode::GeoOnly => 0,
            RetrievalMode::VectorOnly => 2 * self.k1,
            RetrievalMode::Hybrid => self.k1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 {
            return Err(Error::InvalidArgument("k1 must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            return Err(Error::InvalidArgument("base_lr must be > 0".into()));
        }
        if self.encoder_decay.is_nan() || self.encoder_decay <= 0.0 || self.encoder_decay > 1.0 {
            return Err(Error::InvalidArgument(
                "encoder_decay must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Dataset views shared by training and evaluation: scaled features and
/// transformed values for every record, plus the fitted scaler/transform.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    pub scaler: ScalerParams,
    pub transform: TargetTransform,
    scaled: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(
        dataset: &'a Dataset,
        scaler: ScalerParams,
        transform: TargetTransform,
    ) -> Result<Self> {
        let mut scaled = Vec::with_capacity(dataset.len());
        let mut values = Vec::with_capacity(dataset.len());
        for rec in dataset.records() {
            scaled.push(scaler.apply(&rec.features)?);
            values.push(transform.apply(rec)?);
        }
        Ok(Self {
            dataset,
            scaler,
            transform,
            scaled,
            values,
        })
    }

    /// Fits the scaler on the train partition and the transform per the
    /// variant (normalized for the extended model).
    pub fn fit(dataset: &'a Dataset, split: &SplitSpec, config: &TrainConfig) -> Result<Self> {
        let scaler = ScalerParams::fit(dataset, &split.train_ids)?;
        let transform = match config.variant {
            Variant::Rea => TargetTransform::plain(config.target_kind),
            Variant::Erea => {
                let train: HashSet<u64> = split.train_ids.iter().copied().collect();
                TargetTransform::fit_normalized(
                    config.target_kind,
                    dataset.records().iter().filter(|r| train.contains(&r.id)),
                )?
            }
        };
        Prepared::new(dataset, scaler, transform)
    }

    pub fn scaled_at(&self, index: usize) -> &[f64] {
        &self.scaled[index]
    }

    pub fn value_at(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn scaled_by_id(&self, id: u64) -> Option<&[f64]> {
        self.dataset.index_of(id).map(|i| self.scaled[i].as_slice())
    }
}

/// Per-record embeddings produced by one encoder snapshot. The snapshot is
/// retained so query-side embeddings use exactly the weights that built the
/// table.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub epoch: usize,
    ids: Vec<u64>,
    embeds: Vec<Vec<f64>>,
    by_id: HashMap<u64, usize>,
    query_encoder: DenseStack,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.by_id.get(&id).map(|&i| self.embeds[i].as_slice())
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Embedding for a query: the stored row for pool members, otherwise a
    /// fresh forward pass through the table's encoder snapshot.
    pub fn query_embed(&self, id: u64, scaled_features: &[f64]) -> Result<Vec<f64>> {
        match self.get(id) {
            Some(z) => Ok(z.to_vec()),
            None => self.query_encoder.output(scaled_features),
        }
    }
}

/// Rebuilds the whole pool index with the given weights.
pub fn refresh_embeddings(
    model: &ModelParams,
    prepared: &Prepared,
    pool: &HashSet<u64>,
    epoch: usize,
) -> Result<EmbeddingTable> {
    if pool.is_empty() {
        return Err(Error::Empty("retrieval pool is empty".into()));
    }
    let mut ids = Vec::with_capacity(pool.len());
    let mut embeds = Vec::with_capacity(pool.len());
    let mut by_id = HashMap::with_capacity(pool.len());
    for (idx, rec) in prepared.dataset.records().iter().enumerate() {
        if pool.contains(&rec.id) {
            by_id.insert(rec.id, ids.len());
            ids.push(rec.id);
            embeds.push(model.encode(prepared.scaled_at(idx))?);
        }
    }
    Ok(EmbeddingTable {
        epoch,
        ids,
        embeds,
        by_id,
        query_encoder: model.encoder.clone(),
    })
}

/// The latest table plus the one before it ("previous-to-last"), used for
/// stable evaluation-time retrieval.
#[derive(Debug, Clone)]
pub struct EmbeddingHistory {
    pub current: EmbeddingTable,
    pub previous: Option<EmbeddingTable>,
}

impl EmbeddingHistory {
    pub fn new(first: EmbeddingTable) -> Self {
        Self {
            current: first,
            previous: None,
        }
    }

    pub fn push(&mut self, table: EmbeddingTable) {
        self.previous = Some(std::mem::replace(&mut self.current, table));
    }

    /// The table evaluation should retrieve with: previous-to-last when at
    /// least two refreshes happened, else the latest. The flag reports
    /// which one was returned.
    pub fn retrieval_table(&self) -> (&EmbeddingTable, bool) {
        match &self.previous {
            Some(prev) => (prev, true),
            None => (&self.current, false),
        }
    }
}

/// Geo retrieval results for one target; coordinates never change, so
/// these are computed once and reused every epoch.
#[derive(Debug, Clone)]
struct CachedRetrieval {
    geo: Vec<(u64, f64)>,
    pool: Vec<(u64, f64)>,
}

fn geo_retrieve(
    index: &GeoIndex,
    target: &PropertyRecord,
    config: &TrainConfig,
    filter: &RetrievalFilter,
) -> CachedRetrieval {
    let geo = index.knn(target.lat, target.lon, config.k_geo(), filter);
    let pool = if config.k_vec() > 0 {
        index.candidate_pool(target.lat, target.lon, config.k1, filter)
    } else {
        Vec::new()
    };
    CachedRetrieval { geo, pool }
}

fn years_between(target: Option<i64>, comp: Option<i64>) -> f64 {
    match (target, comp) {
        (Some(t), Some(c)) => (t - c) as f64 / DAYS_PER_YEAR,
        _ => 0.0,
    }
}

fn make_entry(
    prepared: &Prepared,
    target: &PropertyRecord,
    id: u64,
    distance_m: f64,
    source: Source,
) -> Result<ComparableEntry> {
    let idx = prepared
        .dataset
        .index_of(id)
        .ok_or_else(|| Error::InvalidArgument(format!("retrieved unknown id {id}")))?;
    let rec = &prepared.dataset.records()[idx];
    Ok(ComparableEntry {
        id,
        source,
        features: prepared.scaled_at(idx).to_vec(),
        relative: vec![distance_m / 1_000.0, years_between(target.date, rec.date)],
        value: prepared.value_at(idx),
    })
}

fn assemble_set(
    prepared: &Prepared,
    cached: &CachedRetrieval,
    table: &EmbeddingTable,
    target: &PropertyRecord,
    target_scaled: &[f64],
    config: &TrainConfig,
) -> Result<ComparableSet> {
    let mut entries = Vec::with_capacity(config.k_geo() + config.k_vec());
    for &(id, dist) in &cached.geo {
        entries.push(make_entry(prepared, target, id, dist, Source::Geo)?);
    }

    if config.k_vec() > 0 {
        let query_z = table.query_embed(target.id, target_scaled)?;
        let chosen: HashSet<u64> = cached.geo.iter().map(|&(id, _)| id).collect();
        let mut scored: Vec<(u64, f64, f64)> = Vec::with_capacity(cached.pool.len());
        for &(id, dist) in &cached.pool {
            if chosen.contains(&id) {
                continue;
            }
            let z = table.get(id).ok_or_else(|| {
                Error::InvalidArgument(format!("candidate {id} missing from embedding table"))
            })?;
            scored.push((id, dist, dot(&query_z, z)));
        }
        // descending similarity, ties by ascending id
        scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        for &(id, dist, _) in scored.iter().take(config.k_vec()) {
            entries.push(make_entry(prepared, target, id, dist, Source::Vector)?);
        }
    }

    if entries.is_empty() {
        return Err(Error::Empty(format!(
            "no admissible comparables for target {}",
            target.id
        )));
    }
    Ok(ComparableSet {
        target_id: target.id,
        entries,
    })
}

/// Draws one target's comparables: `k_geo` nearest by haversine plus
/// `k_vec` re-ranked by embedding dot product over the candidate pool,
/// deduplicated against the geo picks.
pub fn sample_comparables(
    prepared: &Prepared,
    index: &GeoIndex,
    table: &EmbeddingTable,
    target: &PropertyRecord,
    config: &TrainConfig,
    filter: &RetrievalFilter,
) -> Result<ComparableSet> {
    // Scaling the raw features directly (rather than a table lookup) keeps
    // this path valid for ad-hoc targets outside the dataset; for dataset
    // members the result is bit-identical.
    let target_scaled = prepared.scaler.apply(&target.features)?;
    let cached = geo_retrieve(index, target, config, filter);
    assemble_set(prepared, &cached, table, target, &target_scaled, config)
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mdae: Option<f64>,
    pub val_mdabre: Option<f64>,
    pub encoder_lr: f64,
    pub wall_time_s: f64,
    /// Fingerprint of every (target, geo comparable ids) pair sampled this
    /// epoch; constant across epochs in hybrid mode.
    pub geo_digest: u64,
    /// Targets whose admissible pool was smaller than requested.
    pub short_sets: usize,
}

/// Result of a training run: final weights, the encoder snapshots that
/// produced the last two retrieval tables, the tables themselves, and the
/// per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ModelParams,
    /// Weights at the penultimate refresh (rebuilds the previous-to-last
    /// table); None when fewer than two refreshes happened.
    pub refresh_prev: Option<ModelParams>,
    /// Weights at the last refresh (rebuilds the latest table).
    pub refresh_last: Option<ModelParams>,
    pub tables: EmbeddingHistory,
    pub log: Vec<EpochLog>,
    pub scaler: ScalerParams,
    pub transform: TargetTransform,
}

fn fnv1a_add(hash: &mut u64, value: u64) {
    for byte in value.to_le_bytes() {
        *hash ^= byte as u64;
        *hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
}

/// Runs the full loop. Deterministic: (seed, config, dataset, split) fix
/// the final weights and the log bit-for-bit (wall time aside).
pub fn train(dataset: &Dataset, split: &SplitSpec, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    split.validate(dataset)?;

    let prepared = Prepared::fit(dataset, split, config)?;
    let index = GeoIndex::build(dataset)?;
    let pool = split.pool_ids();
    if pool.is_empty() {
        return Err(Error::Empty(
            "offset ∪ train retrieval pool is empty".into(),
        ));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut model = ModelParams::init(
        config.variant,
        dataset.feature_dim(),
        2,
        &config.arch,
        &mut init_rng,
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut flat = model.flatten();
    let mut adam = AdamState::new(flat.len(), config.base_lr);
    let enc_range = model.encoder_range();
    let total = flat.len();

    // Geo retrieval depends only on coordinates and the fixed filter, so
    // cache it per train target across all epochs.
    let train_targets: Vec<usize> = split
        .train_ids
        .iter()
        .map(|&id| {
            dataset
                .index_of(id)
                .ok_or_else(|| Error::InvalidArgument(format!("train id {id} not in dataset")))
        })
        .collect::<Result<_>>()?;
    let caches: Vec<CachedRetrieval> = train_targets
        .iter()
        .map(|&idx| {
            let rec = &dataset.records()[idx];
            let filter = RetrievalFilter {
                exclude_id: Some(rec.id),
                max_date: rec.date,
                pool: Some(&pool),
            };
            geo_retrieve(&index, rec, config, &filter)
        })
        .collect();

    let mut history = EmbeddingHistory::new(refresh_embeddings(&model, &prepared, &pool, 0)?);
    let mut refresh_prev: Option<ModelParams> = None;
    let mut refresh_last: Option<ModelParams> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        if epoch > 0 {
            history.push(refresh_embeddings(&model, &prepared, &pool, epoch)?);
        }
        if epoch + 2 == config.epochs {
            refresh_prev = Some(model.clone());
        }
        if epoch + 1 == config.epochs {
            refresh_last = Some(model.clone());
        }

        // Resample every train target once per epoch.
        let mut short_sets = 0usize;
        let mut digest: u64 = 0xCBF2_9CE4_8422_2325;
        let requested = config.k_geo() + config.k_vec();
        let mut sets = Vec::with_capacity(train_targets.len());
        for (slot, &idx) in train_targets.iter().enumerate() {
            let rec = &dataset.records()[idx];
            let set = assemble_set(
                &prepared,
                &caches[slot],
                &history.current,
                rec,
                prepared.scaled_at(idx),
                config,
            )?;
            if set.entries.len() < requested {
                short_sets += 1;
            }
            fnv1a_add(&mut digest, rec.id);
            for e in &set.entries {
                if e.source == Source::Geo {
                    fnv1a_add(&mut digest, e.id);
                }
            }
            sets.push(set);
        }

        let mut order: Vec<usize> = (0..train_targets.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let lr_scale = config.encoder_decay.powi(epoch as i32);
        let mut sse = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let items: Vec<BatchItem> = chunk
                .iter()
                .map(|&slot| BatchItem {
                    target_features: prepared.scaled_at(train_targets[slot]),
                    comparables: &sets[slot],
                    target_value: prepared.value_at(train_targets[slot]),
                })
                .collect();
            let (mse, grads) = crate::model::loss_and_grads(&model, &items)?;
            if !mse.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss diverged to {mse} at epoch {epoch}"
                )));
            }
            adam_step_segmented(
                &mut flat,
                &grads,
                &mut adam,
                &[(enc_range.clone(), lr_scale), (enc_range.end..total, 1.0)],
            )?;
            model.set_flat(&flat)?;
            sse += mse * items.len() as f64;
        }
        let train_mse = sse / train_targets.len() as f64;

        let (val_mdae, val_mdabre) = if split.val_ids.is_empty() {
            (None, None)
        } else {
            let ctx = EvalContext::new(&prepared, &index, split, config);
            let (table, _) = history.retrieval_table();
            let outcome = evaluate(&model, table, &ctx, Partition::Val)?;
            (Some(outcome.report.mdae), Some(outcome.report.mdabre))
        };

        log.push(EpochLog {
            epoch,
            train_mse,
            val_mdae,
            val_mdabre,
            encoder_lr: config.base_lr * lr_scale,
            wall_time_s: started.elapsed().as_secs_f64(),
            geo_digest: digest,
            short_sets,
        });
    }

    Ok(TrainOutput {
        model,
        refresh_prev,
        refresh_last,
        tables: history,
        log,
        scaler: prepared.scaler.clone(),
        transform: prepared.transform,
    })
}

/// Everything evaluation needs besides the weights and the table.
pub struct EvalContext<'a> {
    pub prepared: &'a Prepared<'a>,
    pub index: &'a GeoIndex,
    pub split: &'a SplitSpec,
    pub config: &'a TrainConfig,
    pool: HashSet<u64>,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        prepared: &'a Prepared<'a>,
        index: &'a GeoIndex,
        split: &'a SplitSpec,
        config: &'a TrainConfig,
    ) -> Self {
        Self {
            prepared,
            index,
            split,
            config,
            pool: split.pool_ids(),
        }
    }

    /// Strictly-past, no-self, pool-restricted filter for one target.
    pub fn filter_for(&self, record: &PropertyRecord) -> RetrievalFilter<'_> {
        RetrievalFilter {
            exclude_id: Some(record.id),
            max_date: record.date,
            pool: Some(&self.pool),
        }
    }
}

/// One comparable as surfaced to users: provenance, relation to the
/// target, and its attention weight.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ComparableReport {
    pub id: u64,
    pub source: Source,
    pub distance_km: f64,
    pub delta_years: f64,
    pub date: Option<i64>,
    pub value: f64,
    pub gamma: f64,
    pub alpha: f64,
}

/// One evaluated target: prediction in metric units plus the full
/// comparable breakdown, sorted by descending attention weight.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PredictionDetail {
    pub target_id: u64,
    pub target_date: Option<i64>,
    pub truth_unit: f64,
    pub pred_unit: f64,
    pub v_star: f64,
    pub v_hat: f64,
    pub adj: f64,
    pub comparables: Vec<ComparableReport>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub details: Vec<PredictionDetail>,
    pub short_sets: usize,
}

/// Full prediction breakdown for one record, which may be an ad-hoc
/// target outside the dataset. The boolean reports a short comparable set.
pub fn predict_detail(
    model: &ModelParams,
    table: &EmbeddingTable,
    ctx: &EvalContext,
    record: &PropertyRecord,
) -> Result<(PredictionDetail, bool)> {
    let scaled = ctx.prepared.scaler.apply(&record.features)?;
    let filter = ctx.filter_for(record);
    let cached = geo_retrieve(ctx.index, record, ctx.config, &filter);
    let set = assemble_set(ctx.prepared, &cached, table, record, &scaled, ctx.config)?;
    let short = set.entries.len() < ctx.config.k_geo() + ctx.config.k_vec();

    let pred = crate::model::model_forward(model, &scaled, &set)?;
    let mut comparables: Vec<ComparableReport> = set
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| ComparableReport {
            id: e.id,
            source: e.source,
            distance_km: e.relative[0],
            delta_years: e.relative[1],
            date: ctx.prepared.dataset.get(e.id).and_then(|r| r.date),
            value: e.value,
            gamma: pred.gamma[i],
            alpha: pred.alpha[i],
        })
        .collect();
    comparables.sort_by(|a, b| b.gamma.total_cmp(&a.gamma).then(a.id.cmp(&b.id)));

    let detail = PredictionDetail {
        target_id: record.id,
        target_date: record.date,
        truth_unit: ctx.prepared.transform.unit_truth(record)?,
        pred_unit: ctx.prepared.transform.unit_value(pred.v_star),
        v_star: pred.v_star,
        v_hat: pred.v_hat,
        adj: pred.adj,
        comparables,
    };
    Ok((detail, short))
}

/// Scores one partition: retrieval through the supplied table, forward
/// with `model`, inversion to metric units, then MdAE / MdABRE.
pub fn evaluate(
    model: &ModelParams,
    table: &EmbeddingTable,
    ctx: &EvalContext,
    partition: Partition,
) -> Result<EvalOutcome> {
    let ids = ctx.split.ids_for(partition);
    if ids.is_empty() {
        return Err(Error::Empty(format!("partition {partition:?} is empty")));
    }

    let mut details = Vec::with_capacity(ids.len());
    let mut preds = Vec::with_capacity(ids.len());
    let mut truths = Vec::with_capacity(ids.len());
    let mut short_sets = 0usize;

    for &id in ids {
        let idx = ctx
            .prepared
            .dataset
            .index_of(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown target id {id}")))?;
        let rec = &ctx.prepared.dataset.records()[idx];
        let (detail, short) = predict_detail(model, table, ctx, rec)?;
        if short {
            short_sets += 1;
        }
        preds.push(detail.pred_unit);
        truths.push(detail.truth_unit);
        details.push(detail);
    }

    let report = MetricsReport::new(mdae(&preds, &truths)?, mdabre(&preds, &truths)?, ids.len());
    Ok(EvalOutcome {
        report,
        details,
        short_sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, temporal_split, SynthConfig};
    use crate::geo::knn_brute_force;

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        let (ds, _) = generate_synthetic(&SynthConfig {
            n,
            seed,
            feature_dim: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        ds
    }

    fn quick_config(mode: RetrievalMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            variant: Variant::Rea,
            k1: 2,
            mode,
            epochs,
            batch_size: 32,
            seed: 9,
            arch: ArchConfig {
                embed_dim: 8,
                encoder_hidden: vec![8],
                ..ArchConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn refresh_is_deterministic_and_spot_checkable() {
        let ds = small_dataset(120, 3);
        let split = temporal_split(&ds, 0.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::Hybrid, 1);
        let prepared = Prepared::fit(&ds, &split, &config).unwrap();
        let pool = split.pool_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ModelParams::init(Variant::Rea, 4, 2, &config.arch, &mut rng).unwrap();

        let a = refresh_embeddings(&model, &prepared, &pool, 0).unwrap();
        let b = refresh_embeddings(&model, &prepared, &pool, 0).unwrap();
        for &id in a.ids() {
            assert_eq!(a.get(id), b.get(id));
            let idx = ds.index_of(id).unwrap();
            let direct = model.encode(prepared.scaled_at(idx)).unwrap();
            assert_eq!(a.get(id).unwrap(), direct.as_slice());
        }

        // a changed weight produces at least one different embedding
        let mut nudged = model.clone();
        let mut flat = nudged.flatten();
        flat[0] += 0.5;
        nudged.set_flat(&flat).unwrap();
        let c = refresh_embeddings(&nudged, &prepared, &pool, 1).unwrap();
        assert!(a.ids().iter().any(|&id| a.get(id) != c.get(id)));
    }

    #[test]
    fn geo_only_sampling_equals_knn() {
        let ds = small_dataset(300, 5);
        let split = temporal_split(&ds, 0.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::GeoOnly, 1);
        let prepared = Prepared::fit(&ds, &split, &config).unwrap();
        let index = GeoIndex::build(&ds).unwrap();
        let pool = split.pool_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ModelParams::init(Variant::Rea, 4, 2, &config.arch, &mut rng).unwrap();
        let table = refresh_embeddings(&model, &prepared, &pool, 0).unwrap();

        let target = ds.get(split.val_ids[0]).unwrap();
        let filter = RetrievalFilter {
            exclude_id: Some(target.id),
            max_date: target.date,
            pool: Some(&pool),
        };
        let set = sample_comparables(&prepared, &index, &table, target, &config, &filter).unwrap();
        let knn = index.knn(target.lat, target.lon, 2 * config.k1, &filter);
        assert_eq!(set.entries.len(), knn.len());
        for (e, (id, _)) in set.entries.iter().zip(&knn) {
            assert_eq!(e.id, *id);
            assert_eq!(e.source, Source::Geo);
        }
    }

    #[test]
    fn constant_encoder_collapses_to_id_tiebreak() {
        let ds = small_dataset(150, 6);
        let split = temporal_split(&ds, 0.0, 0.8, 0.1).unwrap();
        let config = TrainConfig {
            mode: RetrievalMode::VectorOnly,
            ..quick_config(RetrievalMode::VectorOnly, 1)
        };
        let prepared = Prepared::fit(&ds, &split, &config).unwrap();
        let index = GeoIndex::build(&ds).unwrap();
        let pool = split.pool_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = ModelParams::init(Variant::Rea, 4, 2, &config.arch, &mut rng).unwrap();
        model.set_flat(&vec![0.0; model.param_count()]).unwrap();
        let table = refresh_embeddings(&model, &prepared, &pool, 0).unwrap();

        let target = ds.get(split.val_ids[0]).unwrap();
        let filter = RetrievalFilter {
            exclude_id: Some(target.id),
            max_date: target.date,
            pool: Some(&pool),
        };
        let set = sample_comparables(&prepared, &index, &table, target, &config, &filter).unwrap();
        // all dot products are 0: selection degenerates to ascending id
        // over the candidate pool
        let pool_ids = index.candidate_pool(target.lat, target.lon, config.k1, &filter);
        let mut expect: Vec<u64> = pool_ids.iter().map(|&(id, _)| id).collect();
        expect.sort_unstable();
        expect.truncate(2 * config.k1);
        let got: Vec<u64> = set.entries.iter().map(|e| e.id).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn vector_rerank_matches_brute_force_oracle() {
        let ds = small_dataset(500, 7);
        let split = temporal_split(&ds, 0.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::Hybrid, 1);
        let prepared = Prepared::fit(&ds, &split, &config).unwrap();
        let index = GeoIndex::build(&ds).unwrap();
        let pool = split.pool_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = ModelParams::init(Variant::Rea, 4, 2, &config.arch, &mut rng).unwrap();
        let table = refresh_embeddings(&model, &prepared, &pool, 0).unwrap();

        let entries: Vec<(u64, f64, f64, Option<i64>)> = ds
            .records()
            .iter()
            .map(|r| (r.id, r.lat, r.lon, r.date))
            .collect();

        for &target_id in split.val_ids.iter().take(20) {
            let target = ds.get(target_id).unwrap();
            let filter = RetrievalFilter {
                exclude_id: Some(target.id),
                max_date: target.date,
                pool: Some(&pool),
            };
            let set =
                sample_comparables(&prepared, &index, &table, target, &config, &filter).unwrap();

            // brute-force re-rank oracle over the N-pool
            let n_pool = knn_brute_force(
                &entries,
                target.lat,
                target.lon,
                crate::geo::candidate_pool_size(config.k1),
                &filter,
            );
            let geo: Vec<u64> = set
                .entries
                .iter()
                .filter(|e| e.source == Source::Geo)
                .map(|e| e.id)
                .collect();
            let tidx = ds.index_of(target_id).unwrap();
            let qz = table
                .query_embed(target_id, prepared.scaled_at(tidx))
                .unwrap();
            let mut scored: Vec<(u64, f64)> = n_pool
                .iter()
                .filter(|(id, _)| !geo.contains(id))
                .map(|&(id, _)| (id, dot(&qz, table.get(id).unwrap())))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let expect: Vec<u64> = scored.iter().take(config.k1).map(|&(id, _)| id).collect();
            let got: Vec<u64> = set
                .entries
                .iter()
                .filter(|e| e.source == Source::Vector)
                .map(|e| e.id)
                .collect();
            assert_eq!(got, expect, "target {target_id}");

            // and no overlap between the halves
            for id in &got {
                assert!(!geo.contains(id));
            }
        }
    }

    #[test]
    fn zero_epochs_returns_init_and_empty_log() {
        let ds = small_dataset(120, 9);
        let split = temporal_split(&ds, 1.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::Hybrid, 0);
        let out = train(&ds, &split, &config).unwrap();
        assert!(out.log.is_empty());
        assert!(out.refresh_prev.is_none());

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        let init = ModelParams::init(Variant::Rea, 4, 2, &config.arch, &mut rng).unwrap();
        assert_eq!(out.model.flatten(), init.flatten());
    }

    #[test]
    fn training_is_deterministic_bit_for_bit() {
        let ds = small_dataset(160, 10);
        let split = temporal_split(&ds, 1.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::Hybrid, 3);
        let a = train(&ds, &split, &config).unwrap();
        let b = train(&ds, &split, &config).unwrap();
        assert_eq!(a.model.flatten(), b.model.flatten());
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_mse, y.train_mse);
            assert_eq!(x.val_mdae, y.val_mdae);
            assert_eq!(x.geo_digest, y.geo_digest);
        }
    }

    #[test]
    fn hybrid_geo_half_is_epoch_invariant_and_lr_decays() {
        let ds = small_dataset(160, 11);
        let split = temporal_split(&ds, 1.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::Hybrid, 4);
        let out = train(&ds, &split, &config).unwrap();
        let first = out.log[0].geo_digest;
        for (e, entry) in out.log.iter().enumerate() {
            assert_eq!(entry.geo_digest, first);
            let expect = config.base_lr * config.encoder_decay.powi(e as i32);
            assert_eq!(entry.encoder_lr, expect);
        }
    }

    #[test]
    fn evaluation_is_leakage_free_and_self_free() {
        let ds = small_dataset(250, 12);
        let split = temporal_split(&ds, 1.0, 0.7, 0.15).unwrap();
        let config = quick_config(RetrievalMode::Hybrid, 2);
        let out = train(&ds, &split, &config).unwrap();
        let prepared = Prepared::new(&ds, out.scaler.clone(), out.transform).unwrap();
        let index = GeoIndex::build(&ds).unwrap();
        let ctx = EvalContext::new(&prepared, &index, &split, &config);
        let (table, used_prev) = out.tables.retrieval_table();
        assert!(used_prev);
        let outcome = evaluate(&out.model, table, &ctx, Partition::Test).unwrap();

        let pool = split.pool_ids();
        for d in &outcome.details {
            for c in &d.comparables {
                assert_ne!(c.id, d.target_id);
                assert!(pool.contains(&c.id));
                assert!(c.date.unwrap() < d.target_date.unwrap());
            }
            let total: f64 = d.comparables.iter().map(|c| c.gamma).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn memorizable_data_reaches_near_zero_train_error() {
        // constant price: every comparable carries the answer
        let mut records = small_dataset(120, 13).records().to_vec();
        for r in &mut records {
            r.price = 250_000.0;
        }
        let ds = Dataset::new(records).unwrap();
        let split = temporal_split(&ds, 1.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::GeoOnly, 1);
        let out = train(&ds, &split, &config).unwrap();
        let prepared = Prepared::new(&ds, out.scaler.clone(), out.transform).unwrap();
        let index = GeoIndex::build(&ds).unwrap();
        let ctx = EvalContext::new(&prepared, &index, &split, &config);
        let (table, _) = out.tables.retrieval_table();
        let outcome = evaluate(&out.model, table, &ctx, Partition::Train).unwrap();
        assert!(outcome.report.mdae < 1.0, "mdae = {}", outcome.report.mdae);
    }

    #[test]
    fn latest_and_previous_tables_both_evaluate() {
        let ds = small_dataset(160, 14);
        let split = temporal_split(&ds, 1.0, 0.8, 0.1).unwrap();
        let config = quick_config(RetrievalMode::Hybrid, 3);
        let out = train(&ds, &split, &config).unwrap();
        let prepared = Prepared::new(&ds, out.scaler.clone(), out.transform).unwrap();
        let index = GeoIndex::build(&ds).unwrap();
        let ctx = EvalContext::new(&prepared, &index, &split, &config);

        let prev = out.tables.previous.as_ref().unwrap();
        let with_prev = evaluate(&out.model, prev, &ctx, Partition::Val).unwrap();
        let with_last = evaluate(&out.model, &out.tables.current, &ctx, Partition::Val).unwrap();
        assert!(with_prev.report.mdae.is_finite());
        assert!(with_last.report.mdae.is_finite());

        // the stored refresh snapshots rebuild those exact tables
        let rebuilt_prev = refresh_embeddings(
            out.refresh_prev.as_ref().unwrap(),
            &prepared,
            &split.pool_ids(),
            prev.epoch,
        )
        .unwrap();
        for &id in prev.ids() {
            assert_eq!(prev.get(id), rebuilt_prev.get(id));
        }
        let rebuilt_last = refresh_embeddings(
            out.refresh_last.as_ref().unwrap(),
            &prepared,
            &split.pool_ids(),
            out.tables.current.epoch,
        )
        .unwrap();
        for &id in out.tables.current.ids() {
            assert_eq!(out.tables.current.get(id), rebuilt_last.get(id));
        }
    }

    #[test]
    fn empty_partition_is_an_error() {
        let ds = small_dataset(60, 15);
        let split = temporal_split(&ds, 1.0, 0.85, 0.0).unwrap();
        let config = quick_config(RetrievalMode::GeoOnly, 1);
        let out = train(&ds, &split, &config).unwrap();
        let prepared = Prepared::new(&ds, out.scaler.clone(), out.transform).unwrap();
        let index = GeoIndex::build(&ds).unwrap();
        let ctx = EvalContext::new(&prepared, &index, &split, &config);
        let (table, _) = out.tables.retrieval_table();
        assert!(matches!(
            evaluate(&out.model, table, &ctx, Partition::Val),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn k1_zero_is_rejected() {
        let config = TrainConfig {
            k1: 0,
            ..TrainConfig::default()
        };
        assert!(config.validate().is_err());
    }
}
