//! Regression metrics in original price units, baselines, and the
//! retrieval sweep harness.
//!
//! Errors are reported as the median absolute error (MdAE, price units)
//! and the median absolute balanced relative error
//! (MdABRE, |x−y| / min(x,y)), which is symmetric between over- and
//! under-prediction.

use std::collections::HashSet;

use crate::data::{Dataset, Partition, SplitSpec};
use crate::error::{Error, Result};
use crate::geo::{GeoIndex, RetrievalFilter};
use crate::model::Variant;
use crate::train::{evaluate, train, EvalContext, Prepared, RetrievalMode, TrainConfig};

/// Scores for one evaluated partition.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    /// Median absolute error in metric units (price, or price per m²).
    pub mdae: f64,
    /// Median absolute balanced relative error, as a fraction.
    pub mdabre: f64,
    pub n: usize,
    /// Echo of the run configuration, attached by the caller.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl MetricsReport {
    pub fn new(mdae: f64, mdabre: f64, n: usize) -> Self {
        Self {
            mdae,
            mdabre,
            n,
            config: None,
        }
    }
}

/// Balanced relative error |x − y| / min(x, y) for positive prices.
pub fn abre(x: f64, y: f64) -> Result<f64> {
    if !x.is_finite() || !y.is_finite() || x <= 0.0 || y <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "balanced relative error needs positive inputs, got ({x}, {y})"
        )));
    }
    Ok((x - y).abs() / x.min(y))
}

/// Median with the even-length convention: average of the two central
/// order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of an empty slice".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

fn check_pairs(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no prediction pairs".into()));
    }
    Ok(())
}

/// Median absolute error.
pub fn mdae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let abs: Vec<f64> = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .collect();
    median(&abs)
}

/// Median absolute balanced relative error.
pub fn mdabre(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let errs: Vec<f64> = preds
        .iter()
        .zip(truths)
        .map(|(&p, &t)| abre(p, t))
        .collect::<Result<_>>()?;
    median(&errs)
}

/// Ordinary least squares with an intercept via normal equations plus a
/// ridge jitter on the diagonal. Returns [w_1..w_f, intercept].
#[allow(clippy::needless_range_loop)]
pub fn ols_fit(rows: &[Vec<f64>], targets: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows vs {} targets",
            rows.len(),
            targets.len()
        )));
    }
    let f = rows[0].len();
    let dim = f + 1;
    let mut ata = vec![vec![0.0; dim]; dim];
    let mut aty = vec![0.0; dim];
    let mut augmented = vec![0.0; dim];
    for (row, &y) in rows.iter().zip(targets) {
        if row.len() != f {
            return Err(Error::Dimension("ragged feature matrix".into()));
        }
        augmented[..f].copy_from_slice(row);
        augmented[f] = 1.0;
        for i in 0..dim {
            for j in i..dim {
                ata[i][j] += augmented[i] * augmented[j];
            }
            aty[i] += augmented[i] * y;
        }
    }
    for i in 0..dim {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
        ata[i][i] += ridge;
    }

    // Gaussian elimination with partial pivoting.
    let mut m = ata;
    let mut b = aty;
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col].abs() < 1e-12 {
            return Err(Error::Numerical(
                "singular normal equations even after ridge jitter".into(),
            ));
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..dim {
            let factor = m[row][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..dim {
                m[row][k] -= factor * m[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut w = vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut acc = b[row];
        for k in row + 1..dim {
            acc -= m[row][k] * w[k];
        }
        w[row] = acc / m[row][row];
    }
    Ok(w)
}

const OLS_RIDGE: f64 = 1e-8;

/// Linear-regression baseline on scaled features, predictions inverted to
/// metric units.
pub fn baseline_linear(
    prepared: &Prepared,
    split: &SplitSpec,
    partition: Partition,
) -> Result<MetricsReport> {
    let rows: Vec<Vec<f64>> = split
        .train_ids
        .iter()
        .map(|&id| {
            prepared
                .scaled_by_id(id)
                .map(|s| s.to_vec())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown train id {id}")))
        })
        .collect::<Result<_>>()?;
    let targets: Vec<f64> = split
        .train_ids
        .iter()
        .map(|&id| prepared.value_at(prepared.dataset.index_of(id).unwrap()))
        .collect();
    let w = ols_fit(&rows, &targets, OLS_RIDGE)?;

    let ids = split.ids_for(partition);
    if ids.is_empty() {
        return Err(Error::Empty(format!("partition {partition:?} is empty")));
    }
    let mut preds = Vec::with_capacity(ids.len());
    let mut truths = Vec::with_capacity(ids.len());
    for &id in ids {
        let idx = prepared
            .dataset
            .index_of(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown id {id}")))?;
        let x = prepared.scaled_at(idx);
        let f = x.len();
        let mut v = w[f];
        for (wi, xi) in w[..f].iter().zip(x) {
            v += wi * xi;
        }
        preds.push(prepared.transform.unit_value(v));
        truths.push(
            prepared
                .transform
                .unit_truth(&prepared.dataset.records()[idx])?,
        );
    }
    Ok(MetricsReport::new(
        mdae(&preds, &truths)?,
        mdabre(&preds, &truths)?,
        ids.len(),
    ))
}

/// Distance space for the k-nearest-neighbour baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnSpace {
    /// Haversine on coordinates (default, locality-based).
    Geo,
    /// Euclidean on scaled features.
    Feature,
}

/// k-nearest-neighbour baseline: predicts the mean transformed value of
/// the k nearest admissible pool records, inverted to metric units.
/// `filtered` applies the same no-self / strictly-past / pool filters as
/// model retrieval; without it every record is admissible.
pub fn baseline_knn(
    prepared: &Prepared,
    index: &GeoIndex,
    split: &SplitSpec,
    partition: Partition,
    k: usize,
    space: KnnSpace,
    filtered: bool,
) -> Result<MetricsReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let ids = split.ids_for(partition);
    if ids.is_empty() {
        return Err(Error::Empty(format!("partition {partition:?} is empty")));
    }
    let pool = split.pool_ids();

    let mut preds = Vec::with_capacity(ids.len());
    let mut truths = Vec::with_capacity(ids.len());
    for &id in ids {
        let idx = prepared
            .dataset
            .index_of(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown id {id}")))?;
        let rec = &prepared.dataset.records()[idx];
        let filter = if filtered {
            RetrievalFilter {
                exclude_id: Some(id),
                max_date: rec.date,
                pool: Some(&pool),
            }
        } else {
            RetrievalFilter::none()
        };

        let neighbors: Vec<u64> = match space {
            KnnSpace::Geo => index
                .knn(rec.lat, rec.lon, k, &filter)
                .into_iter()
                .map(|(nid, _)| nid)
                .collect(),
            KnnSpace::Feature => {
                let query = prepared.scaled_at(idx);
                let mut scored: Vec<(f64, u64)> = prepared
                    .dataset
                    .records()
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| filter.admits(r.id, r.date))
                    .map(|(i, r)| {
                        let d2 = prepared
                            .scaled_at(i)
                            .iter()
                            .zip(query)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>();
                        (d2, r.id)
                    })
                    .collect();
                scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                scored.into_iter().take(k).map(|(_, nid)| nid).collect()
            }
        };
        if neighbors.is_empty() {
            return Err(Error::Empty(format!(
                "no admissible neighbours for id {id}"
            )));
        }
        let mean_v: f64 = neighbors
            .iter()
            .map(|&nid| prepared.value_at(prepared.dataset.index_of(nid).unwrap()))
            .sum::<f64>()
            / neighbors.len() as f64;
        preds.push(prepared.transform.unit_value(mean_v));
        truths.push(prepared.transform.unit_truth(rec)?);
    }
    Ok(MetricsReport::new(
        mdae(&preds, &truths)?,
        mdabre(&preds, &truths)?,
        ids.len(),
    ))
}

/// One sweep cell: the minimal model trained with a retrieval policy and
/// evaluated on validation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub mode: RetrievalMode,
    pub total_comparables: usize,
    pub seed: u64,
    pub mdae: f64,
    pub mdabre: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepAggregate {
    pub mode: RetrievalMode,
    pub total_comparables: usize,
    pub n_seeds: usize,
    pub mdae_mean: f64,
    pub mdae_ci95: f64,
    pub mdabre_mean: f64,
    pub mdabre_ci95: f64,
}

/// Normal-approximation mean ± 1.96·sd/√n (sample sd; 0 when n < 2).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Trains the minimal model for every (mode, k1, seed) cell and scores it
/// on validation. Cells are emitted in (mode, k, seed) order.
pub fn sweep_retrieval(
    dataset: &Dataset,
    split: &SplitSpec,
    base: &TrainConfig,
    modes: &[RetrievalMode],
    k_list: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if k_list.is_empty() {
        return Err(Error::Empty("sweep needs at least one k".into()));
    }
    let mut rows = Vec::with_capacity(modes.len() * k_list.len() * seeds.len());
    for &mode in modes {
        for &k1 in k_list {
            for &seed in seeds {
                let config = TrainConfig {
                    variant: Variant::Rea,
                    mode,
                    k1,
                    seed,
                    ..base.clone()
                };
                let out = train(dataset, split, &config)?;
                let prepared = Prepared::new(dataset, out.scaler.clone(), out.transform)?;
                let index = GeoIndex::build(dataset)?;
                let ctx = EvalContext::new(&prepared, &index, split, &config);
                let (table, _) = out.tables.retrieval_table();
                let outcome = evaluate(&out.model, table, &ctx, Partition::Val)?;
                rows.push(SweepRow {
                    mode,
                    total_comparables: 2 * k1,
                    seed,
                    mdae: outcome.report.mdae,
                    mdabre: outcome.report.mdabre,
                });
            }
        }
    }
    Ok(rows)
}

/// Collapses sweep rows over seeds, in first-seen (mode, k) order.
pub fn aggregate_sweep(rows: &[SweepRow]) -> Vec<SweepAggregate> {
    let mut order: Vec<(RetrievalMode, usize)> = Vec::new();
    for row in rows {
        let key = (row.mode, row.total_comparables);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(mode, total)| {
            let mdaes: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode && r.total_comparables == total)
                .map(|r| r.mdae)
                .collect();
            let mdabres: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode && r.total_comparables == total)
                .map(|r| r.mdabre)
                .collect();
            let (mdae_mean, mdae_ci95) = mean_ci95(&mdaes);
            let (mdabre_mean, mdabre_ci95) = mean_ci95(&mdabres);
            SweepAggregate {
                mode,
                total_comparables: total,
                n_seeds: mdaes.len(),
                mdae_mean,
                mdae_ci95,
                mdabre_mean,
                mdabre_ci95,
            }
        })
        .collect()
}

fn mode_name(mode: RetrievalMode) -> &'static str {
    match mode {
        RetrievalMode::GeoOnly => "geo_only",
        RetrievalMode::VectorOnly => "vector_only",
        RetrievalMode::Hybrid => "hybrid",
    }
}

/// Plot-ready CSV: `mode,total_comparables,seed,mdae,mdabre`.
pub fn sweep_rows_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mode,total_comparables,seed,mdae,mdabre\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            mode_name(r.mode),
            r.total_comparables,
            r.seed,
            r.mdae,
            r.mdabre
        ));
    }
    out
}

/// Aggregated CSV with mean and 95% CI columns.
pub fn sweep_aggregate_csv(aggs: &[SweepAggregate]) -> String {
    let mut out = String::from(
        "mode,total_comparables,n_seeds,mdae_mean,mdae_ci95,mdabre_mean,mdabre_ci95\n",
    );
    for a in aggs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            mode_name(a.mode),
            a.total_comparables,
            a.n_seeds,
            a.mdae_mean,
            a.mdae_ci95,
            a.mdabre_mean,
            a.mdabre_ci95
        ));
    }
    out
}

/// One row of the baseline comparison report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub mdae_mean: f64,
    pub mdae_ci95: f64,
    pub mdabre_mean: f64,
    pub mdabre_ci95: f64,
    pub n_seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_count: Option<usize>,
    pub per_seed: Vec<SeedScore>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub mdae: f64,
    pub mdabre: f64,
}

/// Full baseline-comparison report on the test partition: linear
/// regression, geographic kNN, and both learned variants with mean and
/// 95% CI across the given seeds.
pub fn baseline_report(
    dataset: &Dataset,
    split: &SplitSpec,
    base: &TrainConfig,
    seeds: &[u64],
    baseline_k: usize,
) -> Result<Vec<ModelRow>> {
    if seeds.is_empty() {
        return Err(Error::Empty(
            "baseline report needs at least one seed".into(),
        ));
    }
    let index = GeoIndex::build(dataset)?;
    let mut rows = Vec::with_capacity(4);

    // Deterministic baselines share the plain (unnormalized) transform.
    let plain_config = TrainConfig {
        variant: Variant::Rea,
        ..base.clone()
    };
    let prepared = Prepared::fit(dataset, split, &plain_config)?;
    let lr = baseline_linear(&prepared, split, Partition::Test)?;
    rows.push(ModelRow {
        model: "LR".into(),
        mdae_mean: lr.mdae,
        mdae_ci95: 0.0,
        mdabre_mean: lr.mdabre,
        mdabre_ci95: 0.0,
        n_seeds: 1,
        param_count: None,
        per_seed: vec![],
    });
    let knn = baseline_knn(
        &prepared,
        &index,
        split,
        Partition::Test,
        baseline_k,
        KnnSpace::Geo,
        true,
    )?;
    rows.push(ModelRow {
        model: "KNN".into(),
        mdae_mean: knn.mdae,
        mdae_ci95: 0.0,
        mdabre_mean: knn.mdabre,
        mdabre_ci95: 0.0,
        n_seeds: 1,
        param_count: None,
        per_seed: vec![],
    });

    for variant in [Variant::Rea, Variant::Erea] {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut params = None;
        for &seed in seeds {
            let config = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            let out = train(dataset, split, &config)?;
            let prepared = Prepared::new(dataset, out.scaler.clone(), out.transform)?;
            let ctx = EvalContext::new(&prepared, &index, split, &config);
            let (table, _) = out.tables.retrieval_table();
            let outcome = evaluate(&out.model, table, &ctx, Partition::Test)?;
            params = Some(out.model.param_count());
            per_seed.push(SeedScore {
                seed,
                mdae: outcome.report.mdae,
                mdabre: outcome.report.mdabre,
            });
        }
        let (mdae_mean, mdae_ci95) =
            mean_ci95(&per_seed.iter().map(|s| s.mdae).collect::<Vec<_>>());
        let (mdabre_mean, mdabre_ci95) =
            mean_ci95(&per_seed.iter().map(|s| s.mdabre).collect::<Vec<_>>());
        rows.push(ModelRow {
            model: match variant {
                Variant::Rea => "REA".into(),
                Variant::Erea => "EREA".into(),
            },
            mdae_mean,
            mdae_ci95,
            mdabre_mean,
            mdabre_ci95,
            n_seeds: per_seed.len(),
            param_count: params,
            per_seed,
        });
    }
    Ok(rows)
}

/// CSV for the baseline comparison report.
pub fn baseline_report_csv(rows: &[ModelRow]) -> String {
    let mut out =
        String::from("model,mdae_mean,mdae_ci95,mdabre_mean,mdabre_ci95,n_seeds,param_count\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model,
            r.mdae_mean,
            r.mdae_ci95,
            r.mdabre_mean,
            r.mdabre_ci95,
            r.n_seeds,
            r.param_count.map(|p| p.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// Share of records whose geographically closest other record has an
/// absolute price difference under `threshold` currency units.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RedundancyReport {
    pub fraction: f64,
    pub threshold: f64,
    /// Aligned with dataset record order.
    pub flags: Vec<bool>,
}

pub fn redundancy_report(dataset: &Dataset, threshold: f64) -> Result<RedundancyReport> {
    let index = GeoIndex::build(dataset)?;
    let mut flags = Vec::with_capacity(dataset.len());
    for rec in dataset.records() {
        let filter = RetrievalFilter {
            exclude_id: Some(rec.id),
            max_date: None,
            pool: None,
        };
        let nearest = index.knn(rec.lat, rec.lon, 1, &filter);
        let flag = nearest
            .first()
            .map(|&(id, _)| {
                let other = dataset.get(id).unwrap();
                (other.price - rec.price).abs() < threshold
            })
            .unwrap_or(false);
        flags.push(flag);
    }
    let fraction = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    Ok(RedundancyReport {
        fraction,
        threshold,
        flags,
    })
}

// Keep the import used by baseline_knn's pool filtering visible.
#[allow(unused)]
fn _pool_type_check(pool: &HashSet<u64>) {
    let _ = pool;
}
