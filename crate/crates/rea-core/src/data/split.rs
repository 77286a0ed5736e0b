//! Leakage-safe dataset partitioning.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::record::Dataset;
use super::DAYS_PER_YEAR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Temporal,
    Random,
}

/// Disjoint id sets covering the dataset. The offset pool is retrieval-only:
/// its records are never training, validation or test targets.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub offset_years: f64,
    pub offset_ids: Vec<u64>,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
}

impl SplitSpec {
    /// Ids admissible as retrieval candidates: offset ∪ train.
    pub fn pool_ids(&self) -> HashSet<u64> {
        self.offset_ids
            .iter()
            .chain(&self.train_ids)
            .copied()
            .collect()
    }

    pub fn ids_for(&self, partition: Partition) -> &[u64] {
        match partition {
            Partition::Train => &self.train_ids,
            Partition::Val => &self.val_ids,
            Partition::Test => &self.test_ids,
        }
    }

    /// Checks disjointness, coverage, and (temporal mode) the chronological
    /// ordering of partitions under the (date, id) tie rule.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut seen = HashSet::with_capacity(dataset.len());
        for &id in self
            .offset_ids
            .iter()
            .chain(&self.train_ids)
            .chain(&self.val_ids)
            .chain(&self.test_ids)
        {
            if dataset.get(id).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "split references unknown id {id}"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!(
                    "id {id} appears in two partitions"
                )));
            }
        }
        if seen.len() != dataset.len() {
            return Err(Error::InvalidArgument(format!(
                "split covers {} of {} records",
                seen.len(),
                dataset.len()
            )));
        }

        if self.mode == SplitMode::Temporal {
            let key = |id: u64| -> Result<(i64, u64)> {
                let rec = dataset.get(id).unwrap();
                let date = rec.date.ok_or_else(|| {
                    Error::Unsupported(format!("record {id} has no date in a temporal split"))
                })?;
                Ok((date, id))
            };
            let max_key = |ids: &[u64]| -> Result<Option<(i64, u64)>> {
                let mut out = None;
                for &id in ids {
                    let k = key(id)?;
                    if out.is_none_or(|m| k > m) {
                        out = Some(k);
                    }
                }
                Ok(out)
            };
            let min_key = |ids: &[u64]| -> Result<Option<(i64, u64)>> {
                let mut out: Option<(i64, u64)> = None;
                for &id in ids {
                    let k = key(id)?;
                    if out.is_none_or(|m| k < m) {
                        out = Some(k);
                    }
                }
                Ok(out)
            };

            // offset strictly precedes train in date
            if let (Some((od, _)), Some((td, _))) =
                (max_key(&self.offset_ids)?, min_key(&self.train_ids)?)
            {
                if od >= td {
                    return Err(Error::InvalidArgument(
                        "offset pool overlaps train dates".into(),
                    ));
                }
            }
            for (earlier, later, what) in [
                (&self.train_ids, &self.val_ids, "train/val"),
                (&self.val_ids, &self.test_ids, "val/test"),
            ] {
                if let (Some(a), Some(b)) = (max_key(earlier)?, min_key(later)?) {
                    if a > b {
                        return Err(Error::InvalidArgument(format!(
                            "{what} boundary violates chronological order"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Targets a metrics report can be computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

fn check_fractions(train_frac: f64, val_frac: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac >= 1.0
    {
        return Err(Error::InvalidArgument(format!(
            "fractions train={train_frac} val={val_frac} must be in [0,1] with train+val < 1"
        )));
    }
    Ok(())
}

/// Splits chronologically. Records dated within `offset_years` of the
/// earliest transaction form the retrieval-only offset pool; the remainder
/// is sorted by (date, id) and partitioned train/val/test by the fractions.
///
/// The offset cutoff is `earliest + round(offset_years * 365.25)` days,
/// exclusive.
pub fn temporal_split(
    dataset: &Dataset,
    offset_years: f64,
    train_frac: f64,
    val_frac: f64,
) -> Result<SplitSpec> {
    check_fractions(train_frac, val_frac)?;
    if offset_years < 0.0 {
        return Err(Error::InvalidArgument("offset_years must be >= 0".into()));
    }

    let mut keyed = Vec::with_capacity(dataset.len());
    for rec in dataset.records() {
        let date = rec.date.ok_or_else(|| {
            Error::Unsupported(format!(
                "record {} has no date; temporal split unavailable",
                rec.id
            ))
        })?;
        keyed.push((date, rec.id));
    }
    keyed.sort_unstable();

    let earliest = keyed.first().map(|&(d, _)| d).unwrap_or(0);
    let cutoff = earliest + (offset_years * DAYS_PER_YEAR).round() as i64;

    let (offset, rest): (Vec<_>, Vec<_>) = keyed.into_iter().partition(|&(d, _)| d < cutoff);
    let n = rest.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;
    if n_train == 0 {
        return Err(Error::Empty(
            "offset pool and fractions leave an empty train partition".into(),
        ));
    }

    let ids = |slice: &[(i64, u64)]| slice.iter().map(|&(_, id)| id).collect::<Vec<_>>();
    Ok(SplitSpec {
        mode: SplitMode::Temporal,
        offset_years,
        offset_ids: ids(&offset),
        train_ids: ids(&rest[..n_train]),
        val_ids: ids(&rest[n_train..n_train + n_val]),
        test_ids: ids(&rest[n_train + n_val..]),
    })
}

/// Deterministic shuffled split with an empty offset pool, for datasets
/// without transaction dates.
pub fn random_split(
    dataset: &Dataset,
    seed: u64,
    train_frac: f64,
    val_frac: f64,
) -> Result<SplitSpec> {
    check_fractions(train_frac, val_frac)?;

    let mut ids: Vec<u64> = dataset.records().iter().map(|r| r.id).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;

    Ok(SplitSpec {
        mode: SplitMode::Random,
        offset_years: 0.0,
        offset_ids: vec![],
        train_ids: ids[..n_train].to_vec(),
        val_ids: ids[n_train..n_train + n_val].to_vec(),
        test_ids: ids[n_train + n_val..].to_vec(),
    })
}
